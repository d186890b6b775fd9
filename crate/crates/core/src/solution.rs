use std::time::Duration;

/// Why a max-Q solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    /// Branch and bound closed the gap to within the requested tolerance.
    Optimal,
    /// An iterative solver met its convergence threshold.
    GapLimit,
    TimeLimit,
    /// Iteration or node budget exhausted.
    IterLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapLimit => "gap_limit",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::IterLimit => "iter_limit",
        }
    }
}

/// Result of maximising `Q(x, ·)` over an action box.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxQSolution<T> {
    /// `Q(x, action)`, evaluated by a forward pass.
    pub value: T,
    pub action: Vec<T>,
    /// Proven optimality gap; `+inf` when the solver cannot certify one.
    pub gap: T,
    pub status: SolveStatus,
    /// Branch-and-bound nodes or ascent/sampling iterations.
    pub iterations: usize,
    pub elapsed: Duration,
}

impl<T: num_traits::Float> MaxQSolution<T> {
    pub fn gap_known(&self) -> bool {
        self.gap.is_finite()
    }
}
