use drlm::io::{
    diagnostics_row, execute_run, format_field_snapshot, format_rate_table, parse_config,
    parse_reference_table, DiagnosticsWriter, ProblemKind, RunConfig, Viscosity,
    DIAGNOSTICS_HEADER, RATE_HEADER,
};
use drlm::mesh::Grid;
use drlm::problems::{ErrorReport, RateTable};
use drlm::scheme::{step_pdrlm1, NoSlip, SchemeConfig, State};
use drlm::{Error, SchemeKind};
use proptest::prelude::*;

fn tiny_run(problem: ProblemKind, kind: SchemeKind) -> RunConfig {
    RunConfig {
        kind,
        nx: 8,
        ny: 8,
        tau: 0.05,
        t_end: 0.2,
        problem,
        snapshot_times: vec![0.1],
        ..RunConfig::default()
    }
}

#[test]
fn run_writes_diagnostics_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    for problem in [
        ProblemKind::Vortex,
        ProblemKind::Cavity,
        ProblemKind::Custom,
    ] {
        for kind in [
            SchemeKind::Pdrlm1,
            SchemeKind::Pdrlm2,
            SchemeKind::BaselinePc,
        ] {
            let out = dir.path().join(format!("{problem:?}-{kind}"));
            let s = execute_run(&tiny_run(problem, kind), &out).unwrap();
            assert_eq!(s.steps, 4);
            let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
            let lines: Vec<&str> = diag.lines().collect();
            assert_eq!(lines[0], DIAGNOSTICS_HEADER);
            assert_eq!(lines.len(), 5);
            let cols = DIAGNOSTICS_HEADER.split(',').count();
            assert!(lines.iter().all(|l| l.split(',').count() == cols));
            assert!(out.join("snapshot_00000002.csv").exists());
            assert!(out.join("final.csv").exists());
            assert_eq!(s.errors.is_some(), problem == ProblemKind::Vortex);
        }
    }
}

#[test]
fn runs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(ProblemKind::Custom, SchemeKind::Pdrlm2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    execute_run(&cfg, &a).unwrap();
    execute_run(&cfg, &b).unwrap();
    for f in ["diagnostics.csv", "final.csv", "snapshot_00000002.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn failing_step_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run(ProblemKind::Custom, SchemeKind::Pdrlm1);
    cfg.solver.max_iter = Some(1);
    cfg.solver.rel_tol = 1e-14;
    let err = execute_run(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::SolverDiverged { .. }), "{err:?}");
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let last = diag.lines().last().unwrap();
    assert!(last.starts_with("1,"), "{last}");
    assert_eq!(
        last.split(',').count(),
        DIAGNOSTICS_HEADER.split(',').count()
    );
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        RunConfig {
            tau: 0.03,
            ..RunConfig::default()
        },
        RunConfig {
            nx: 8,
            ny: 4,
            ..RunConfig::default()
        },
        RunConfig {
            stride: 0,
            ..RunConfig::default()
        },
        RunConfig {
            viscosity: Viscosity::Re(-1.0),
            ..RunConfig::default()
        },
        RunConfig {
            snapshot_times: vec![2.0],
            ..RunConfig::default()
        },
    ];
    for cfg in bad {
        let e = execute_run(&cfg, &dir.path().join("x")).unwrap_err();
        assert!(
            matches!(e, Error::Argument { .. } | Error::Contract(_)),
            "{e:?}"
        );
        assert!(!dir.path().join("x").join("diagnostics.csv").exists());
    }
}

#[test]
fn diagnostics_stride_and_failure_rows() {
    let g = Grid::unit_square(6).unwrap();
    let cfg = SchemeConfig::new(SchemeKind::Pdrlm1, 0.1, 1.0, 0.01).unwrap();
    let mut state = drlm::problems::no_slip_box_state(&g);
    let mut w = DiagnosticsWriter::new(Vec::new(), "mem".as_ref(), 2).unwrap();
    for _ in 0..5 {
        let (next, d) = step_pdrlm1(&state, &cfg, &NoSlip).unwrap();
        w.record(&d).unwrap();
        state = next;
    }
    w.record_failure(6, 0.6, &Error::Contract("boom".into()))
        .unwrap();
    assert_eq!(w.rows(), 3);
    let text = String::from_utf8(w.finish().unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("4,"));
    assert!(lines[3].starts_with("6,"));
    let cols = DIAGNOSTICS_HEADER.split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
}

#[test]
fn diagnostics_values_round_trip() {
    let g = Grid::unit_square(6).unwrap();
    let cfg = SchemeConfig::new(SchemeKind::Pdrlm1, 0.1, 1.0, 0.01).unwrap();
    let (_, d) = step_pdrlm1(&drlm::problems::no_slip_box_state(&g), &cfg, &NoSlip).unwrap();
    let row = diagnostics_row(&d);
    let f: Vec<&str> = row.split(',').collect();
    assert_eq!(f[0], "1");
    assert_eq!(f[2].parse::<f64>().unwrap(), d.q);
    assert_eq!(f[3].parse::<f64>().unwrap(), d.k);
    assert_eq!(f[7].parse::<f64>().unwrap(), d.quad.unwrap().c);
}

#[test]
fn snapshot_has_metadata_and_one_row_per_cell() {
    let g = Grid::new(4, 3, 0.0, 1.0, 0.0, 1.0).unwrap();
    let s = State::zero(&g);
    let text = format_field_snapshot(&s);
    let meta: Vec<&str> = text.lines().filter(|l| l.starts_with('#')).collect();
    assert!(meta.iter().any(|l| l.trim() == "# nx = 4"));
    assert!(meta.iter().any(|l| l.trim() == "# ny = 3"));
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "x,y,u,v,p,speed");
    assert_eq!(data.len(), 1 + 12);
}

#[test]
fn rate_table_csv_marks_failures() {
    let e = ErrorReport {
        e_u: 1e-3,
        e_p: 2e-3,
        e_q: 1e-4,
        t: 1.0,
    };
    let t =
        RateTable::from_rows(&[0.1, 0.05], vec![Ok(e), Err("bad, worse\nline".into())]).unwrap();
    let csv = format_rate_table(&t);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], RATE_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",ok"));
    assert!(lines[2].contains("failed: bad  worse line"));
    assert_eq!(lines[2].split(',').count(), 8);
}

#[test]
fn config_overrides_by_section() {
    let cfg = parse_config(
        "[grid]\nn = 24\n[scheme]\nkind = baseline\nconvection = off\n[problem]\nname = custom\n",
    )
    .unwrap();
    assert_eq!((cfg.nx, cfg.ny), (24, 24));
    assert_eq!(cfg.kind, SchemeKind::BaselinePc);
    assert!(!cfg.convection);
    assert_eq!(cfg.problem, ProblemKind::Custom);
    for (text, line) in [
        ("[grid]\n\nnx = 4\n[scheme]\nkind = rk4\n", 5),
        ("[solver]\npreconditioner = ilu\n", 2),
        ("[output]\nstride = x\n", 2),
        ("[grid\n", 1),
    ] {
        match parse_config(text) {
            Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

proptest! {
    #[test]
    fn reference_tables_round_trip(
        mut coords in proptest::collection::btree_set(0u32..=1000, 1..30),
        vals in proptest::collection::vec(-1e3f64..1e3, 30),
    ) {
        let rows: Vec<(f64, f64)> = std::mem::take(&mut coords)
            .into_iter()
            .zip(vals)
            .map(|(c, v)| (c as f64 / 1000.0, v))
            .collect();
        let t = drlm::io::ReferenceTable { source: "test data".into(), rows };
        let again = parse_reference_table(&drlm::io::format_reference_table(&t)).unwrap();
        prop_assert_eq!(again, t);
    }

    #[test]
    fn rationals_match_division(p in -1e6f64..1e6, q in 1e-3f64..1e6) {
        let v = drlm::io::parse_rational(&format!("{p:e}/{q:e}")).unwrap();
        prop_assert_eq!(v, p / q);
    }
}

#[test]
fn reference_errors_name_the_row() {
    let row_of = |t: &str| match parse_reference_table(t) {
        Err(Error::Reference { row, .. }) => row,
        other => panic!("{other:?}"),
    };
    assert_eq!(row_of("# source: x\n0.1,1\n0.1,2\n"), 3);
    assert_eq!(row_of("# source: x\ncoord,value\n1.5,0\n"), 3);
    assert_eq!(row_of("0.1,1\n"), 0);
    assert_eq!(row_of("# source: x\n"), 0);
    assert_eq!(row_of("# source: x\n0.1,nan\n"), 2);
    assert_eq!(row_of("# source: x\n0.1,1,2\n"), 2);
}
