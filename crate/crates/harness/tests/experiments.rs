use urns_harness::config::resolve_args;
use urns_harness::experiments::{judge, log_log_slope, run, validate};
use urns_harness::record::{read_csv, ResultRecord};

fn record_for(args: &[&str]) -> ResultRecord {
    let cfg = resolve_args(args.iter().copied()).unwrap();
    validate(&cfg).unwrap();
    run(&cfg).unwrap()
}

/// Rebuilds a record from its CSV data plus the JSON header, as a reader of
/// the output files would.
fn reread(rec: &ResultRecord) -> ResultRecord {
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    let (columns, rows) = read_csv(buf.as_slice()).unwrap();
    let header = rec.header_json();
    let mut back = ResultRecord::new(&rec.experiment, rec.params.clone(), &[]);
    back.columns = columns;
    back.rows = rows;
    back.summary = serde_json::from_value(header["summary"].clone()).unwrap();
    back
}

fn verdicts_are_pure(args: &[&str]) -> ResultRecord {
    let rec = record_for(args);
    assert_eq!(judge(&rec), rec.verdicts);
    assert_eq!(judge(&reread(&rec)), rec.verdicts, "{args:?}");
    rec
}

#[test]
fn rate_table_verdicts_and_closed_form() {
    let rec = verdicts_are_pure(&["rate-table"]);
    assert_eq!(rec.rows.len(), 8);
    assert!(rec.all_pass(), "{}", rec.summary_line());
    assert!(rec.verdicts.iter().any(|v| v.name == "closed_form_agreement"));
    let rec = verdicts_are_pure(&["rate-table", "--p", "0.75", "--alpha", "0.2:0.4:0.1"]);
    assert!(rec.all_pass(), "{}", rec.summary_line());
    assert!(rec.verdicts.iter().all(|v| v.name != "closed_form_agreement"));
    assert!(rec.reals("oracle_c_p").iter().all(|v| v.is_nan()));
}

#[test]
fn laplace_check_is_order_one_over_t() {
    let rec = verdicts_are_pure(&["laplace-check", "--t", "250:1000:2"]);
    assert_eq!(rec.rows.len(), 9);
    assert!(rec.all_pass(), "{}", rec.summary_line());
}

#[test]
fn ode_solve_record() {
    let rec = verdicts_are_pure(&["ode-solve", "--s-max", "2", "--step", "0.01"]);
    assert_eq!(rec.rows.len(), 201);
    assert!(rec.all_pass(), "{}", rec.summary_line());
    // p = 1: A(s) = 1/2 - (1/2 - alpha0) e^{-s}.
    let a = rec.reals("A");
    assert!((a[200] - (0.5 - 0.2 * (-2.0f64).exp())).abs() < 1e-9);
}

#[test]
fn lemma_sweep_small_grid() {
    let rec = verdicts_are_pure(&["lemma-sweep", "--m-max", "5"]);
    assert_eq!(rec.rows.len(), 4 * 9 * 3);
    assert!(rec.all_pass(), "{}", rec.summary_line());
    let rec = verdicts_are_pure(&["lemma-sweep", "--m-max", "6"]);
    let failed: Vec<&str> = rec.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.as_str()).collect();
    assert_eq!(failed, ["tail_bound"]);
}

#[test]
fn trajectory_small_run() {
    let args = ["trajectory-vs-ode", "--t", "30:60:2", "--paths", "400", "--dp-R", "400", "--drift-t", "100"];
    let rec = verdicts_are_pure(&args);
    assert_eq!(rec.rows.len(), 2);
    let k = rec.summary_f64("K").unwrap();
    assert!((k - 5f64.ln()).abs() < 1e-6, "{k}");
    assert_eq!(rec.reals("horizon_steps"), [48.0, 96.0]);
    assert_eq!(record_for(&args).rows, rec.rows);
}

#[test]
fn crosscheck_symmetric_start() {
    let rec = verdicts_are_pure(&[
        "oracle-crosscheck", "--t", "20", "--alpha", "0.5", "--reps", "20000", "--dp-R", "300",
    ]);
    let est = rec.reals("estimate");
    let se = rec.reals("std_error");
    let methods = rec.texts("method");
    for i in 0..est.len() {
        if methods[i].starts_with("dp_race") {
            assert!((est[i] - 0.5).abs() < 1e-12);
        } else {
            assert!((est[i] - 0.5).abs() <= 3.0 * se[i], "{} {}", methods[i], est[i]);
        }
    }
    assert!(rec.all_pass(), "{}", rec.summary_line());
}

#[test]
fn crosscheck_is_reproducible() {
    let args = ["oracle-crosscheck", "--reps", "5000", "--dp-R", "200", "--seed", "5"];
    assert_eq!(record_for(&args).rows, record_for(&args).rows);
}

#[test]
fn rate_convergence_small_run() {
    let rec = verdicts_are_pure(&["rate-convergence", "--t", "20:40:2", "--reps", "20000", "--dp-R", "400"]);
    assert_eq!(rec.rows.len(), 2);
    assert!(rec.reals("log_over_t").iter().all(|v| *v < 0.0));
    assert!(rec.verdicts.iter().any(|v| v.name == "dp_agreement_t20"));
}

#[test]
fn simulate_moments() {
    let rec = verdicts_are_pure(&["simulate", "--t", "20", "--alpha", "0.5", "--reps", "4000", "--steps", "30"]);
    assert!(rec.verdicts.is_empty());
    assert_eq!(rec.rows.len(), 31);
    // Polya urn: the mean fraction is a martingale.
    let mean = rec.reals("mean_fraction");
    let sd = rec.reals("sd_fraction");
    assert_eq!(mean[0], 0.5);
    assert!((mean[30] - 0.5).abs() <= 4.0 * sd[30] / 4000f64.sqrt());
}

#[test]
fn slope_fit() {
    let x = [1.0, 2.0, 4.0, 8.0];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
    assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
}
