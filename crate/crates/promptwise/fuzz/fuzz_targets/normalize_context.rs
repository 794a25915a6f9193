#![no_main]

use libfuzzer_sys::fuzz_target;

use promptwise::domain::normalize_context;

// Context ingestion must never panic on arbitrary float vectors. Accepted
// contexts sit inside the unit ball and renormalization is a bitwise no-op,
// which is what keeps replayed runs byte-identical.
fuzz_target!(|data: &[u8]| {
    let raw: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Ok(ctx) = normalize_context(&raw) {
        let features = ctx.features();
        assert!(!features.is_empty(), "accepted context has dimension >= 1");
        assert!(
            features.iter().all(|v| v.is_finite()),
            "accepted context is finite"
        );
        let norm: f64 = features.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1.0, "norm {norm} should be <= 1 after projection");
        let again = normalize_context(features).expect("renormalization accepts its own output");
        assert_eq!(
            features,
            again.features(),
            "renormalization must be a bitwise no-op"
        );
    }
});
