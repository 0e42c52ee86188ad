#![no_main]

use hercules::persist::{decode_htree, encode_htree};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((settings, tree)) = decode_htree(data) {
        let mut again = Vec::new();
        encode_htree(&settings, &tree, &mut again);
        assert_eq!(again, data);
    }
});
