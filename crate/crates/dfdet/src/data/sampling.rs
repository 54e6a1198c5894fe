//! Even frame sampling: `index_i = floor(i * L / k)`.

use crate::error::{Error, Result};

/// `k` evenly spaced indices in `[0, video_length)`; videos shorter than `k`
/// yield every frame exactly once.
pub fn sample_frames(video_length: usize, k: usize) -> Result<Vec<usize>> {
    if video_length == 0 {
        return Err(Error::EmptyVideo("cannot sample frames from a zero-length video".into()));
    }
    if video_length <= k {
        return Ok((0..video_length).collect());
    }
    Ok((0..k).map(|i| i * video_length / k).collect())
}
