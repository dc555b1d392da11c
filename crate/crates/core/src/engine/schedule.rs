use alloc::vec::Vec;

/// One entry of the alternating drag/denoise loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Action {
    Drag,
    Denoise,
}

/// `B` drags followed by one denoise, repeated `denoise_steps` times.
pub fn aldd_schedule(denoise_steps: usize, drag_steps: usize) -> Vec<Action> {
    let mut out = Vec::with_capacity(denoise_steps * (drag_steps + 1));
    for _ in 0..denoise_steps {
        out.extend(core::iter::repeat_n(Action::Drag, drag_steps));
        out.push(Action::Denoise);
    }
    out
}
