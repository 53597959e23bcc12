/// Latching loss monitor that decides when the trigger batch fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorState {
    pub reference_loss: f64,
    pub current_loss: f64,
    pub triggered: bool,
}

impl MonitorState {
    pub fn new(reference_loss: f64) -> Self {
        Self {
            reference_loss,
            current_loss: reference_loss,
            triggered: false,
        }
    }

    /// Records `loss`; trips once `loss >= gamma * reference_loss`.
    pub fn update(mut self, loss: f64, gamma: f64) -> Self {
        self.current_loss = loss;
        if loss >= gamma * self.reference_loss {
            self.triggered = true;
        }
        self
    }
}

pub fn monitor_update(state: MonitorState, loss: f64, gamma: f64) -> MonitorState {
    state.update(loss, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trips_and_latches() {
        let m = MonitorState::new(0.4);
        assert!(!m.update(0.4, 1.5).triggered);
        let m = m.update(0.8, 1.5);
        assert!(m.triggered);
        let m = m.update(0.1, 1.5);
        assert!(m.triggered);
        assert_eq!(m.current_loss, 0.1);
    }
}
