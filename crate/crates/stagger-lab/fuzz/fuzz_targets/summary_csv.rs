//! The summary.csv reader ingests files a user may have edited by hand.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = stagger_lab::runner::parse_summary_csv(text);
    }
});
