use otfs_chanpred::estimator::Estimator;
use otfs_chanpred::harness::{csv_header, run_campaign, write_csv, Axis, CampaignSpec, Selection};
use otfs_chanpred::predictor::Predictor;
use otfs_chanpred::SimConfig;

fn spec(values: Vec<f64>, trials: usize, selections: Vec<Selection>) -> CampaignSpec {
    let mut base = SimConfig::desk();
    base.n_f = 2;
    CampaignSpec { base, axis: Axis::Snr, values, trials, selections, timing: false }
}

fn render(spec: &CampaignSpec) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, spec, &run_campaign(spec).unwrap()).unwrap();
    String::from_utf8(buf).unwrap()
}

fn kinds(text: &str) -> (usize, usize) {
    let rows: Vec<&str> = text.lines().skip(2).collect();
    let raw = rows.iter().filter(|r| r.starts_with("raw,")).count();
    let agg = rows.iter().filter(|r| r.starts_with("agg,")).count();
    (raw, agg)
}

#[test]
fn single_point_single_trial() {
    let s = spec(vec![10.0], 1, vec![Selection::new(Estimator::Vbl, Predictor::Sbee)]);
    let text = render(&s);
    assert!(text.starts_with("# otfs-sim sweep axis=snr generated "));
    assert_eq!(text.lines().nth(1).unwrap(), csv_header().join(","));
    assert_eq!(kinds(&text), (1, 1));
}

#[test]
fn two_points_two_trials() {
    let s = spec(vec![0.0, 10.0], 2, vec![Selection::new(Estimator::Vbl, Predictor::Sbee)]);
    let text = render(&s);
    assert_eq!(kinds(&text), (4, 2));
    let width = csv_header().len();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').count(), width);
        assert!(!line.contains("NaN"));
    }
}

#[test]
fn rerun_is_identical_apart_from_the_timestamp() {
    let s = spec(vec![5.0], 3, vec![Selection::new(Estimator::Bsomp, Predictor::Prony), Selection::perfect(Predictor::Ar)]);
    let a = render(&s);
    let b = render(&s);
    assert_eq!(a.lines().skip(1).collect::<Vec<_>>(), b.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn predicted_csi_never_beats_perfect_csi_on_average() {
    let s = spec(
        vec![5.0, 20.0],
        16,
        vec![
            Selection::new(Estimator::Vbl, Predictor::Sbee),
            Selection::perfect(Predictor::Sbee),
            Selection::perfect(Predictor::Prony),
            Selection::perfect(Predictor::Ar),
        ],
    );
    for p in run_campaign(&s).unwrap() {
        assert_eq!(p.failures(), 0);
        let aser = p.aser().unwrap();
        assert!(aser <= 1.02, "ASER {aser}");
        assert!(p.se().unwrap() <= p.se_upper().unwrap() + 0.02);
    }
}

#[test]
fn axis_values_reach_the_configuration() {
    let mut base = SimConfig::desk();
    base.n_f = 0;
    let s = CampaignSpec {
        base,
        axis: Axis::Iterations,
        values: vec![0.0, 2.0],
        trials: 2,
        selections: vec![Selection::new(Estimator::Vbl, Predictor::None)],
        timing: false,
    };
    let points = run_campaign(&s).unwrap();
    for p in &points {
        for t in p.ok() {
            assert!(t.trace.len() <= p.axis_value as usize + 1);
            assert!(t.nmse_cp.is_empty());
        }
    }
    let bad = CampaignSpec { values: vec![1.5], ..s };
    assert!(run_campaign(&bad).is_err());
}
