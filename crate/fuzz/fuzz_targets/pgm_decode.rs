#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = graphla::image::decode_pgm(data) {
        assert_eq!(img.len(), img.shape().0 * img.shape().1);
        assert!(img.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
