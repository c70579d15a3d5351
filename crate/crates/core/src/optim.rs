//! Adam over a fixed list of flat parameter buffers, plus global-norm
//! gradient clipping.

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// One moment buffer per slot, sized by `lens`.
    pub fn new<I: IntoIterator<Item = usize>>(lens: I, learning_rate: f64) -> Self {
        let (m, v) = lens.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Starts a new step; call once before updating the slots.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len());
        assert_eq!(param.len(), self.m[slot].len(), "slot {slot} size changed");
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            param[i] -= self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Factor that brings a gradient of squared norm `sum_squares` to at most
/// `max_norm`.
pub fn clip_factor(sum_squares: f64, max_norm: f64) -> f64 {
    let norm = sum_squares.sqrt();
    if norm > max_norm { max_norm / norm } else { 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new([2], 0.1);
        let mut p = [1.0, -1.0];
        opt.tick();
        opt.update(0, &mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new([3], 0.05);
        let target = [1.0, -2.0, 0.5];
        let mut p = [0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.tick();
            opt.update(0, &mut p, &g);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3);
        }
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_factor(4.0, 1.0), 0.5);
        assert_eq!(clip_factor(0.25, 1.0), 1.0);
    }
}
