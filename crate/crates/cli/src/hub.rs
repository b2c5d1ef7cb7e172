//! Session registry for the service.
//!
//! Each session is owned by a dedicated writer thread that drains a command
//! queue, so commands on one session are serialized while different
//! sessions run in parallel. Handlers submit closures and await the reply.
//! Every appended event is written to the session's log on disk and
//! broadcast to stream subscribers.

use std::collections::BTreeMap;
use std::sync::Arc;

use litscope_core::session::EventSink;
use litscope_core::{Event, Services, Session, SessionConfig, SessionError, SessionId, SessionState, SessionStore};
use parking_lot::Mutex;
use tokio::sync::{broadcast, mpsc, oneshot};

type Job = Box<dyn FnOnce(&mut Session) + Send>;

const BROADCAST_CAPACITY: usize = 1024;

struct Persisting {
    store: SessionStore,
    events: broadcast::Sender<Event>,
}

impl EventSink for Persisting {
    fn appended(&self, event: &Event, state: &SessionState) {
        if let Err(e) = self.store.append(&state.session_id, event) {
            tracing::error!(session = %state.session_id, seq = event.seq, error = %e, "failed to persist event");
        }
        // No receivers is fine.
        let _ = self.events.send(event.clone());
    }
}

#[derive(Clone)]
pub struct SessionHandle {
    jobs: mpsc::UnboundedSender<Job>,
    events: broadcast::Sender<Event>,
}

impl SessionHandle {
    fn spawn(mut session: Session, store: SessionStore) -> Self {
        let (events, _) = broadcast::channel(BROADCAST_CAPACITY);
        session.set_sink(Some(Arc::new(Persisting {
            store,
            events: events.clone(),
        })));
        let (jobs, mut rx) = mpsc::unbounded_channel::<Job>();
        let name = format!("session-{}", session.id());
        std::thread::Builder::new()
            .name(name)
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    job(&mut session);
                }
            })
            .expect("spawn session writer");
        Self { jobs, events }
    }

    /// Runs `f` on the writer thread and returns its result.
    pub async fn call<T, F>(&self, f: F) -> Result<T, SessionError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |s| {
            let _ = tx.send(f(s));
        });
        if self.jobs.send(job).is_err() {
            return Err(SessionError::InvalidPayload("session writer has stopped".into()));
        }
        rx.await
            .unwrap_or_else(|_| Err(SessionError::InvalidPayload("session writer dropped the command".into())))
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }
}

pub struct Hub {
    store: SessionStore,
    services: Services,
    sessions: Mutex<BTreeMap<SessionId, SessionHandle>>,
    next: Mutex<u64>,
}

fn ordinal(id: &SessionId) -> Option<u64> {
    id.as_str().strip_prefix('s')?.parse().ok()
}

impl Hub {
    /// Opens the data directory and restores every session found in it by
    /// replaying its log.
    pub fn open(store: SessionStore, services: Services) -> anyhow::Result<Self> {
        let mut sessions = BTreeMap::new();
        let mut next = 1;
        for id in store.sessions()? {
            let log = store.read_log(&id)?;
            let session = Session::restore(log, services.clone())
                .map_err(|e| anyhow::anyhow!("restoring session {id}: {e}"))?;
            tracing::info!(session = %id, events = session.events().len(), "restored session");
            if let Some(n) = ordinal(&id) {
                next = next.max(n + 1);
            }
            sessions.insert(id, SessionHandle::spawn(session, store.clone()));
        }
        Ok(Self {
            store,
            services,
            sessions: Mutex::new(sessions),
            next: Mutex::new(next),
        })
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn create(&self, config: SessionConfig) -> Result<SessionId, SessionError> {
        let id = {
            let mut next = self.next.lock();
            let id = SessionId(format!("s{}", *next));
            *next += 1;
            id
        };
        let session = Session::create(id.clone(), config, self.services.clone())?;
        self.store.append(&id, &session.events()[0])?;
        self.sessions.lock().insert(id.clone(), SessionHandle::spawn(session, self.store.clone()));
        Ok(id)
    }

    pub fn get(&self, id: &SessionId) -> Result<SessionHandle, SessionError> {
        self.sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.clone()))
    }

    pub fn ids(&self) -> Vec<SessionId> {
        self.sessions.lock().keys().cloned().collect()
    }
}
