use alloc::vec::Vec;

/// Number of frames handed to the MLLM per video.
pub const DEFAULT_SAMPLED_FRAMES: usize = 16;

/// `count` evenly spaced frame indices over `0..total`, first and last
/// included, rounded half up. Returns every frame when `total <= count`.
pub fn uniform_sample(total: usize, count: usize) -> Vec<usize> {
    if total <= count {
        return (0..total).collect();
    }
    if count <= 1 {
        return (0..count).collect();
    }
    let span = (total - 1) as u128;
    let steps = (count - 1) as u128;
    (0..count as u128)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect()
}
