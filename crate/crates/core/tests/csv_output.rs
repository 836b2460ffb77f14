use plc_keygen::experiment::{
    emit_csv, run, ExperimentConfig, Method, SweepConfig, SweepVariable, CSV_COLUMNS,
};

fn parse(field: &str) -> f64 {
    if field.is_empty() {
        f64::NAN
    } else {
        field.parse().unwrap()
    }
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

#[test]
fn table_and_config_survive_a_round_trip() {
    let mut cfg = ExperimentConfig { n_realizations: 6, method: Method::Tmt, ..Default::default() };
    cfg.grid.n_bins = 300;
    cfg.tmt.key_length = 50;
    cfg.sweep = SweepConfig { variable: SweepVariable::SnrDb, values: vec![20.0, 40.0] };
    let table = run(&cfg, Some(2)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit_csv(&table, &cfg, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let preamble: String = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|l| format!("{}\n", l.strip_prefix(' ').unwrap_or(l)))
        .collect();
    assert_eq!(ExperimentConfig::from_toml_str(&preamble).unwrap(), cfg);

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, CSV_COLUMNS);
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2 * (6 + 3));

    let mut rows = table.rows.iter();
    let mut aggs = table.aggregates.iter();
    for block in records.chunks(9) {
        let agg = aggs.next().unwrap();
        for rec in &block[..6] {
            let row = rows.next().unwrap();
            assert_eq!(rec[1].parse::<usize>().unwrap(), row.realization);
            let expected = [row.sweep, row.d_ab, row.d_ae, row.rho_ab, row.rho_ae, row.delta_median_db];
            let got = [&rec[0], &rec[2], &rec[3], &rec[4], &rec[5], &rec[6]].map(parse);
            assert!(expected.iter().zip(&got).all(|(a, b)| same(*a, *b)), "{rec:?}");
            assert!(same(parse(&rec[8]), row.asym_ab));
        }
        assert_eq!(&block[6][1], "mean");
        assert!(same(parse(&block[6][2]), agg.mean.d_ab));
        assert!(same(parse(&block[6][7]), agg.key_entropy));
        assert_eq!(&block[7][1], "median");
        assert!(same(parse(&block[7][6]), agg.median.delta_median_db));
        assert_eq!(&block[8][1], "ratio");
        assert!(same(parse(&block[8][3]), agg.distance_ratio()));
        assert!(same(parse(&block[8][4]), agg.correlation_ratio()));
    }
}
