#![no_main]

use hercules::persist::{load_index, HTREE_FILE, LRD_FILE, LSD_FILE};
use libfuzzer_sys::fuzz_target;

// Layout: u16 htree length, u16 lsd length, htree bytes, lsd bytes, lrd bytes.
fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let h = u16::from_le_bytes([data[0], data[1]]) as usize;
    let l = u16::from_le_bytes([data[2], data[3]]) as usize;
    let rest = &data[4..];
    if rest.len() < h + l {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(HTREE_FILE), &rest[..h]).unwrap();
    std::fs::write(dir.path().join(LSD_FILE), &rest[h..h + l]).unwrap();
    std::fs::write(dir.path().join(LRD_FILE), &rest[h + l..]).unwrap();
    if let Ok(index) = load_index(dir.path()) {
        for &leaf in index.tree().leaves() {
            let series = index.read_leaf(leaf).unwrap();
            assert_eq!(series.len(), index.tree().node(leaf).size as usize * index.settings().series_len);
        }
    }
});
