use std::cell::RefCell;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::model::GaussianSplat;
use crate::store::{fetch_chunk, ChunkSource, OctreeNode};

pub type LoadResult = (usize, Result<Arc<Vec<GaussianSplat>>, String>);

/// Background thread that fetches and decodes chunks. The render side only
/// ever polls it, so a frame never waits on I/O.
pub struct AsyncLoader {
    requests: Option<Sender<OctreeNode>>,
    results: Receiver<LoadResult>,
    stash: RefCell<Vec<LoadResult>>,
    worker: Option<JoinHandle<()>>,
}

impl AsyncLoader {
    pub fn spawn<S: ChunkSource + 'static>(source: Arc<S>) -> AsyncLoader {
        let (req_tx, req_rx) = channel::<OctreeNode>();
        let (res_tx, res_rx) = channel::<LoadResult>();
        let worker = std::thread::spawn(move || {
            for node in req_rx {
                let result = fetch_chunk(source.as_ref(), &node).map(Arc::new).map_err(|e| e.to_string());
                if res_tx.send((node.id, result)).is_err() {
                    break;
                }
            }
        });
        AsyncLoader {
            requests: Some(req_tx),
            results: res_rx,
            stash: RefCell::new(Vec::new()),
            worker: Some(worker),
        }
    }

    pub fn request(&self, node: OctreeNode) {
        if let Some(tx) = &self.requests {
            let _ = tx.send(node);
        }
    }

    /// Finished loads since the last call, without blocking.
    pub fn completed(&self) -> Vec<LoadResult> {
        let mut out = std::mem::take(&mut *self.stash.borrow_mut());
        out.extend(self.results.try_iter());
        out
    }

    /// Blocks until at least one load has finished.
    pub fn wait_one(&self) {
        if !self.stash.borrow().is_empty() {
            return;
        }
        if let Ok(r) = self.results.recv() {
            self.stash.borrow_mut().push(r);
        }
    }
}

impl Drop for AsyncLoader {
    fn drop(&mut self) {
        self.requests.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
