#![no_main]
use libfuzzer_sys::fuzz_target;

use graphla::image::{decode_f64, encode_f64};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_f64(data) {
        // accepted inputs re-encode to a bit-identical image
        let again = decode_f64(&encode_f64(&img)).unwrap();
        assert_eq!(img.shape(), again.shape());
        for (a, b) in img.as_slice().iter().zip(again.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
});
