#![no_main]

use drlm::io::{parse_rational, parse_rational_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = parse_rational(text) {
            assert!(v.is_finite());
        }
        if let Ok(list) = parse_rational_list(text) {
            assert!(list.len() <= text.len() + 1);
        }
    }
});
