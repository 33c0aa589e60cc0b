use std::collections::VecDeque;
use std::sync::{Mutex, MutexGuard};

use tokio::sync::Notify;
use tokio_util::sync::CancellationToken;

use crate::handler::AgentHandler;
use crate::model::Job;

/// A job together with the handler instance that serves it.
pub struct JobTicket {
    pub job: Job,
    pub handler: Box<dyn AgentHandler>,
}

impl std::fmt::Debug for JobTicket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobTicket").field("job", self.job.id()).finish_non_exhaustive()
    }
}

/// Unbounded FIFO feeding one stage's workers.
#[derive(Debug, Default)]
pub struct StageQueue {
    items: Mutex<VecDeque<JobTicket>>,
    ready: Notify,
}

impl StageQueue {
    fn items(&self) -> MutexGuard<'_, VecDeque<JobTicket>> {
        self.items.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, ticket: JobTicket) {
        self.items().push_back(ticket);
        self.ready.notify_one();
    }

    pub fn try_pop(&self) -> Option<JobTicket> {
        self.items().pop_front()
    }

    /// Waits for the next ticket; None once `shutdown` is cancelled.
    pub async fn pop(&self, shutdown: &CancellationToken) -> Option<JobTicket> {
        loop {
            if shutdown.is_cancelled() {
                return None;
            }
            let ready = self.ready.notified();
            tokio::pin!(ready);
            ready.as_mut().enable();
            if let Some(t) = self.try_pop() {
                // Pass on a wakeup this waiter may have consumed.
                if !self.items().is_empty() {
                    self.ready.notify_one();
                }
                return Some(t);
            }
            tokio::select! {
                _ = shutdown.cancelled() => return None,
                _ = &mut ready => {}
            }
        }
    }

    pub fn len(&self) -> usize {
        self.items().len()
    }

    pub fn is_empty(&self) -> bool {
        self.items().is_empty()
    }

    pub fn drain(&self) -> Vec<JobTicket> {
        self.items().drain(..).collect()
    }
}
