use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use r2e_core::reasoner::FeatureSet;

/// State kept between `/rank` and the `/explain` and `/audit` calls that
/// follow it.
#[derive(Debug)]
pub struct Session {
    pub query: String,
    pub k: usize,
    pub c: f64,
    pub features: BTreeMap<String, FeatureSet<f64>>,
    /// Unmasked logit per answer.
    pub logits: BTreeMap<String, f64>,
    /// Current audit mask per answer.
    pub masks: BTreeMap<String, BTreeSet<usize>>,
    pub created: Instant,
    last_used: Instant,
}

impl Session {
    pub fn new(
        query: String,
        k: usize,
        c: f64,
        features: BTreeMap<String, FeatureSet<f64>>,
        logits: BTreeMap<String, f64>,
    ) -> Self {
        let now = Instant::now();
        Self {
            query,
            k,
            c,
            features,
            logits,
            masks: BTreeMap::new(),
            created: now,
            last_used: now,
        }
    }

    pub fn mask_of(&self, answer: &str) -> Vec<usize> {
        self.masks.get(answer).map(|m| m.iter().copied().collect()).unwrap_or_default()
    }
}

pub type SharedSession = Arc<Mutex<Session>>;

/// In-memory sessions that expire after `ttl` without use.
#[derive(Debug)]
pub struct SessionStore {
    ttl: Duration,
    sessions: Mutex<HashMap<String, SharedSession>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn insert(&self, session: Session) -> String {
        let id = format!("{:032x}", rand::random::<u128>());
        let mut map = self.sessions.lock().expect("session map poisoned");
        self.purge(&mut map);
        map.insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    /// The live session with this id, marked as used.
    pub fn get(&self, id: &str) -> Option<SharedSession> {
        let mut map = self.sessions.lock().expect("session map poisoned");
        self.purge(&mut map);
        let s = map.get(id)?.clone();
        s.lock().expect("session poisoned").last_used = Instant::now();
        Some(s)
    }

    pub fn len(&self) -> usize {
        let mut map = self.sessions.lock().expect("session map poisoned");
        self.purge(&mut map);
        map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn purge(&self, map: &mut HashMap<String, SharedSession>) {
        let ttl = self.ttl;
        // A session locked by an in-flight request is in use, so keep it.
        map.retain(|_, s| s.try_lock().map_or(true, |s| s.last_used.elapsed() <= ttl));
    }
}
