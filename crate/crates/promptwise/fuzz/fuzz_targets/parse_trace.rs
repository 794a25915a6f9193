#![no_main]

use libfuzzer_sys::fuzz_target;

use promptwise::env::parse_trace;

// The trace decoder must never panic on arbitrary line-delimited input, and
// every record it does accept must satisfy the replay contract: one outcome
// list per arm, each holding at least tau_max pre-sampled bits, contexts
// inside the unit ball with a consistent dimension.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    // First two bytes steer the validation bounds; the rest is the document.
    let num_arms = 1 + (data[0] % 8) as usize;
    let tau_max = 1 + (data[1] % 8) as usize;
    let text = match std::str::from_utf8(&data[2..]) {
        Ok(s) => s,
        Err(_) => return,
    };
    if let Ok(records) = parse_trace(text, num_arms, tau_max) {
        let dim = records.first().map(|r| r.context.dim());
        for rec in &records {
            assert_eq!(rec.outcomes.len(), num_arms, "one outcome list per arm");
            for bits in &rec.outcomes {
                assert!(bits.len() >= tau_max, "every arm answers tau_max rounds");
            }
            assert_eq!(Some(rec.context.dim()), dim, "uniform context dimension");
            let norm: f64 = rec
                .context
                .features()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(norm <= 1.0 + 1e-9, "context projected into the unit ball");
        }
    }
});
