//! Background frame writer. The hand-off queue holds one frame and the
//! writer works on at most one more, so the engine blocks once two frames
//! are in flight.

use std::path::PathBuf;
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use crate::error::FrameError;
use crate::scene::config::FrameFormat;
use crate::scene::frame::{write_frame, write_frame_ply, FrameRecord};

pub struct FrameWriter {
    tx: Option<SyncSender<FrameRecord>>,
    handle: Option<JoinHandle<Result<usize, FrameError>>>,
}

impl FrameWriter {
    pub fn spawn(dir: PathBuf, formats: Vec<FrameFormat>) -> Self {
        let (tx, rx) = sync_channel::<FrameRecord>(1);
        let handle = std::thread::spawn(move || {
            let mut written = 0;
            for record in rx {
                for f in &formats {
                    match f {
                        FrameFormat::Binary => write_frame(&record, &dir)?,
                        FrameFormat::Ply => write_frame_ply(&record, &dir)?,
                    };
                }
                written += 1;
            }
            Ok(written)
        });
        Self { tx: Some(tx), handle: Some(handle) }
    }

    /// Queues a frame, blocking while the queue is full. Returns false when
    /// the writer has stopped after an error; `finish` reports it.
    pub fn submit(&self, record: FrameRecord) -> bool {
        self.tx.as_ref().is_some_and(|tx| tx.send(record).is_ok())
    }

    /// Drains the queue and returns the number of frames written.
    pub fn finish(mut self) -> Result<usize, FrameError> {
        self.tx.take();
        self.handle.take().expect("joined once").join().expect("frame writer panicked")
    }
}

impl Drop for FrameWriter {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
