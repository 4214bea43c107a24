/// Dual-averaging step-size adaptation toward a target acceptance rate.
#[derive(Clone, Debug)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    h_avg: f64,
    count: usize,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const DECAY: f64 = 0.75;

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        let ls = initial_step.ln();
        Self { target, mu: ls, log_step: ls, log_step_avg: ls, h_avg: 0.0, count: 0 }
    }

    /// Step to use for the next iteration.
    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step, used once adaptation stops.
    pub fn final_step(&self) -> f64 {
        self.log_step_avg.exp()
    }

    pub fn update(&mut self, acceptance: f64) {
        self.count += 1;
        let m = self.count as f64;
        let eta = 1.0 / (m + T0);
        self.h_avg = (1.0 - eta) * self.h_avg + eta * (self.target - acceptance);
        self.log_step = self.mu - m.sqrt() / GAMMA * self.h_avg;
        let w = m.powf(-DECAY);
        self.log_step_avg = w * self.log_step + (1.0 - w) * self.log_step_avg;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_monotone_acceptance_curve() {
        // Acceptance exp(-step) hits 0.57 at step = -ln 0.57.
        let mut da = DualAveraging::new(0.1, 0.57);
        for _ in 0..5000 {
            let a = (-da.step()).exp();
            da.update(a);
        }
        assert!((da.final_step() + 0.57f64.ln()).abs() < 0.02);
    }
}
