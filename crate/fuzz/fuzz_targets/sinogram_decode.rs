#![no_main]
use libfuzzer_sys::fuzz_target;

// input is `<sidecar json> NUL <raw f64 values>`
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(sidecar) = std::str::from_utf8(&data[..split]) else { return };
    let bin = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(s) = graphla::geometry::decode_sinogram(bin, sidecar) {
        assert_eq!(s.len() * 8, bin.len());
    }
});
