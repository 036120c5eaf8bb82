//! Frame-by-frame inference with a sliding window.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use super::Predictor;
use crate::error::Result;
use crate::types::{Frame, PressureMap};

/// One output of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub index: usize,
    pub timestamp_s: f64,
    pub map: PressureMap,
    pub latency: Duration,
}

/// Ring buffer of the last `H` frames, front-filled with the first frame
/// until `H` frames have arrived.
pub struct StreamInfer<'a, P: Predictor + ?Sized> {
    predictor: &'a P,
    buffer: VecDeque<Frame>,
    seen: usize,
}

impl<'a, P: Predictor + ?Sized> StreamInfer<'a, P> {
    pub fn new(predictor: &'a P) -> Self {
        Self {
            predictor,
            buffer: VecDeque::with_capacity(predictor.window_len()),
            seen: 0,
        }
    }

    pub fn push(&mut self, frame: Frame) -> Result<StreamOutput> {
        let start = Instant::now();
        let h = self.predictor.window_len();
        if self.buffer.is_empty() {
            self.buffer.extend(std::iter::repeat_n(frame.clone(), h - 1));
        } else {
            self.buffer.pop_front();
        }
        let timestamp_s = frame.timestamp_s();
        self.buffer.push_back(frame);
        let frames = self.buffer.make_contiguous();
        let raw = self.predictor.predict_raw(frames)?;
        let map = PressureMap::from_raw_clamped(self.predictor.grid(), &raw)?;
        let out = StreamOutput {
            index: self.seen,
            timestamp_s,
            map,
            latency: start.elapsed(),
        };
        self.seen += 1;
        Ok(out)
    }
}

/// Run a source to exhaustion, handing each output to `sink`; returns the
/// number of frames processed. A `std::sync::mpsc::Receiver` works as a
/// thread-safe source and ends the stream when its senders hang up.
pub fn stream_infer<P, I, F>(source: I, predictor: &P, mut sink: F) -> Result<usize>
where
    P: Predictor + ?Sized,
    I: IntoIterator<Item = Frame>,
    F: FnMut(StreamOutput) -> Result<()>,
{
    let mut s = StreamInfer::new(predictor);
    for frame in source {
        sink(s.push(frame)?)?;
    }
    Ok(s.seen)
}
