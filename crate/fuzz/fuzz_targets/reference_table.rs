#![no_main]

use drlm::io::{format_reference_table, parse_reference_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(table) = parse_reference_table(text) else {
        return;
    };
    assert!(!table.rows.is_empty());
    for w in table.rows.windows(2) {
        assert!(w[0].0 < w[1].0);
    }
    for &(c, v) in &table.rows {
        assert!((0.0..=1.0).contains(&c) && v.is_finite());
    }
    // a parsed table survives a write/read cycle unchanged
    if !table.source.contains(['\n', '\r']) {
        let again = parse_reference_table(&format_reference_table(&table)).expect("round trip");
        assert_eq!(again, table);
    }
});
