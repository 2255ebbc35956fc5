#![no_main]

use imaginenet::dataset::{decode_features, encode_features};
use libfuzzer_sys::fuzz_target;

// bytes 0 and 1 are frames and dim, the rest is the feature file
fuzz_target!(|data: &[u8]| {
    let [frames, dim, rest @ ..] = data else { return };
    let Ok(m) = decode_features(rest, usize::from(*frames), usize::from(*dim)) else { return };
    assert_eq!(m.shape(), (usize::from(*frames), usize::from(*dim)));
    assert_eq!(encode_features(&m), rest);
});
