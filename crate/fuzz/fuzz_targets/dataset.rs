#![no_main]

use hercules::raw::{decode_dataset, encode_f32s};
use libfuzzer_sys::fuzz_target;

// First byte picks the series length, the rest is the file body.
fuzz_target!(|data: &[u8]| {
    let Some((&n, body)) = data.split_first() else {
        return;
    };
    let n = n as usize % 64 + 1;
    if let Ok(values) = decode_dataset(body, n) {
        assert_eq!(values.len() % n, 0);
        let mut again = Vec::new();
        encode_f32s(&values, &mut again);
        assert_eq!(again, body);
    }
});
