//! Service state and the events that change it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use pilar_core::explanation::RecommendationSnapshot;
use pilar_core::router::IntentKind;
use pilar_core::{Engine, Explanation, Mode, UserProfile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub recipe_id: String,
    pub query: String,
    pub intent: Option<IntentKind>,
    pub mode: Mode,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub profile_id: String,
    /// Consolidated ingredient ids from the last detect call.
    pub detected: Option<BTreeSet<String>>,
    pub recommendation: Option<Arc<RecommendationSnapshot>>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    ProfileUpsert {
        profile: UserProfile,
    },
    SessionCreate {
        session_id: String,
        profile_id: String,
    },
    Detect {
        session_id: String,
        source: String,
        ingredients: BTreeSet<String>,
    },
    /// The ranking itself is recomputed from the session state when applied.
    Recommend {
        session_id: String,
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ingredients: Option<BTreeSet<String>>,
    },
    Explain {
        session_id: String,
        entry: Box<HistoryEntry>,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::ProfileUpsert { .. } => "profile_upsert",
            Event::SessionCreate { .. } => "session_create",
            Event::Detect { .. } => "detect",
            Event::Recommend { .. } => "recommend",
            Event::Explain { .. } => "explain",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ApplyError {
    #[error("unknown profile {0}")]
    UnknownProfile(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    DuplicateSession(String),
    #[error("unknown recipe in session: {0}")]
    UnknownRecipe(String),
    #[error("{step} required first")]
    OutOfOrder { step: &'static str },
    #[error("ranking failed: {0}")]
    Rank(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Seq of the last applied event; 0 before any.
    pub last_seq: u64,
    pub profiles: BTreeMap<String, UserProfile>,
    pub sessions: BTreeMap<String, Session>,
}

impl State {
    pub fn session(&self, id: &str) -> Result<&Session, ApplyError> {
        self.sessions.get(id).ok_or_else(|| ApplyError::UnknownSession(id.to_string()))
    }

    /// Checks an event against the current state without changing it.
    pub fn check(&self, event: &Event) -> Result<(), ApplyError> {
        match event {
            Event::ProfileUpsert { .. } => Ok(()),
            Event::SessionCreate { session_id, profile_id } => {
                if !self.profiles.contains_key(profile_id) {
                    return Err(ApplyError::UnknownProfile(profile_id.clone()));
                }
                if self.sessions.contains_key(session_id) {
                    return Err(ApplyError::DuplicateSession(session_id.clone()));
                }
                Ok(())
            }
            Event::Detect { session_id, .. } => self.session(session_id).map(|_| ()),
            Event::Recommend { session_id, ingredients, .. } => {
                let s = self.session(session_id)?;
                if ingredients.is_none() && s.detected.is_none() {
                    return Err(ApplyError::OutOfOrder { step: "detect" });
                }
                if !self.profiles.contains_key(&s.profile_id) {
                    return Err(ApplyError::UnknownProfile(s.profile_id.clone()));
                }
                Ok(())
            }
            Event::Explain { session_id, entry } => {
                let s = self.session(session_id)?;
                match &s.recommendation {
                    Some(r) if r.result.find(&entry.recipe_id).is_some() => Ok(()),
                    Some(_) => Err(ApplyError::UnknownRecipe(entry.recipe_id.clone())),
                    None => Err(ApplyError::OutOfOrder { step: "recommend" }),
                }
            }
        }
    }

    /// Applies the event recorded at `seq`. Events at or below `last_seq`
    /// were already applied and are skipped, which makes replay idempotent.
    pub fn apply(&mut self, seq: u64, event: &Event, engine: &Engine) -> Result<(), ApplyError> {
        if seq <= self.last_seq {
            return Ok(());
        }
        self.check(event)?;
        match event {
            Event::ProfileUpsert { profile } => {
                self.profiles.insert(profile.id.clone(), profile.clone());
            }
            Event::SessionCreate { session_id, profile_id } => {
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        session_id: session_id.clone(),
                        profile_id: profile_id.clone(),
                        detected: None,
                        recommendation: None,
                        history: Vec::new(),
                    },
                );
            }
            Event::Detect { session_id, ingredients, .. } => {
                let s = self.sessions.get_mut(session_id).expect("checked");
                s.detected = Some(ingredients.clone());
            }
            Event::Recommend { session_id, k, ingredients } => {
                let s = &self.sessions[session_id];
                let profile = &self.profiles[&s.profile_id];
                let detected = ingredients.as_ref().or(s.detected.as_ref()).expect("checked");
                let snapshot =
                    engine.recommend(profile, detected, Some(*k)).map_err(|e| ApplyError::Rank(e.to_string()))?;
                let s = self.sessions.get_mut(session_id).expect("checked");
                if let Some(i) = ingredients {
                    s.detected = Some(i.clone());
                }
                s.recommendation = Some(Arc::new(snapshot));
            }
            Event::Explain { session_id, entry } => {
                let s = self.sessions.get_mut(session_id).expect("checked");
                s.history.push((**entry).clone());
            }
        }
        self.last_seq = seq;
        Ok(())
    }
}
