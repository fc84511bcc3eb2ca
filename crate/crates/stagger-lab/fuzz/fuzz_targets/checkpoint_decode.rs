//! The binary checkpoint decoder faces untrusted bytes; it must bound all
//! allocations and return errors instead of panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = stagger_lab::checkpoint::decode(data);
});
