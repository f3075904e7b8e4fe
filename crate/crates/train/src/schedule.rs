//! Linear warmup followed by linear decay to zero.

pub fn lr_schedule(step: usize, total_steps: usize, lr: f64, warmup_fraction: f64) -> f64 {
    assert!(step <= total_steps, "step {step} past total {total_steps}");
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = (warmup_fraction * total_steps as f64).round() as usize;
    if step <= warmup && warmup > 0 {
        lr * step as f64 / warmup as f64
    } else {
        lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero_peaks_at_warmup_end_decays_to_zero() {
        let total = 1000;
        let lr = 1e-4;
        assert_eq!(lr_schedule(0, total, lr, 0.05), 0.0);
        assert_eq!(lr_schedule(50, total, lr, 0.05), 1e-4);
        assert_eq!(lr_schedule(total, total, lr, 0.05), 0.0);
        // monotone up then down
        assert!(lr_schedule(25, total, lr, 0.05) < lr_schedule(50, total, lr, 0.05));
        assert!(lr_schedule(500, total, lr, 0.05) > lr_schedule(900, total, lr, 0.05));
    }
}
