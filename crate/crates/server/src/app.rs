use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use narrativeplay::chunker::NarrativeText;
use narrativeplay::extraction::{extract_storyline, names::slug, ExtractionError};
use narrativeplay::hashing::hex_digest;
use narrativeplay::media::{select_voice, MediaRequest, MediaStore, VoiceCatalog};
use narrativeplay::progression::{
    list_playable_characters, AgentResponse, Engine, Phase, SessionState, TranscriptEntry,
};
use narrativeplay::provider::Gateway;
use narrativeplay::storyline::{CharacterProfile, Storyline};
use tokio::sync::{OwnedMutexGuard, Semaphore};
use tracing::{info, warn};

use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::error::{codes, ApiError};
use crate::jobs::{IngestionJob, JobState};
use crate::store::{FileStore, SessionEnvelope, StoreError};
use crate::views::{
    AssetRef, CharacterSummary, CharactersResponse, EventPanel, LineView, ParticipantView, Position, ReplyView,
    SessionResponse,
};

pub type ApiResult<T> = Result<T, ApiError>;

/// Shared service state behind the HTTP layer and the CLI.
#[derive(Debug)]
pub struct App {
    config: ServiceConfig,
    store: FileStore,
    gateway: Gateway,
    media: Arc<MediaStore>,
    voices: VoiceCatalog,
    clock: Arc<dyn Clock>,
    storylines: RwLock<HashMap<String, Arc<Storyline>>>,
    jobs: Mutex<BTreeMap<String, IngestionJob>>,
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    /// Sessions that failed to load, with the diagnostic.
    locked: Mutex<HashMap<String, String>>,
    creating: Mutex<()>,
    workers: Arc<Semaphore>,
}

/// Outcome of a narrative upload.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub job: IngestionJob,
    /// False when an identical upload already had a job.
    pub created: bool,
}

impl App {
    /// Opens the data directory. Jobs interrupted by a shutdown are marked
    /// failed and their partial storylines removed.
    pub fn new(
        config: ServiceConfig,
        gateway: Gateway,
        media: MediaStore,
        voices: VoiceCatalog,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Self> {
        let store = FileStore::open(&config.data_dir)?;
        let mut jobs = BTreeMap::new();
        for mut job in store.load_jobs()? {
            if !job.state.is_terminal() {
                warn!(narrative = %job.narrative_id, "ingestion was interrupted");
                store.discard_storyline(&job.narrative_id)?;
                job.fail("interrupted by a service restart", clock.now_ms())?;
                store.save_job(&job)?;
            }
            jobs.insert(job.narrative_id.clone(), job);
        }
        let workers = Arc::new(Semaphore::new(config.workers.max(1)));
        Ok(Self {
            config,
            store,
            gateway,
            media: Arc::new(media),
            voices,
            clock,
            storylines: RwLock::new(HashMap::new()),
            jobs: Mutex::new(jobs),
            session_locks: Mutex::new(HashMap::new()),
            locked: Mutex::new(HashMap::new()),
            creating: Mutex::new(()),
            workers,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    pub fn media(&self) -> &Arc<MediaStore> {
        &self.media
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    // ---- narratives ----

    /// Validates an upload and records a queued job for it. The job is not
    /// started; see [`App::spawn_ingestion`] and [`App::run_ingestion`].
    pub fn submit_narrative(&self, title: &str, body: &str) -> ApiResult<Submission> {
        if body.trim().is_empty() {
            return Err(ApiError::new(400, codes::EMPTY_BODY, "narrative body is empty"));
        }
        if body.len() > self.config.max_body_bytes {
            return Err(ApiError::new(
                413,
                codes::BODY_TOO_LARGE,
                format!(
                    "narrative body is {} bytes; the limit is {} bytes",
                    body.len(),
                    self.config.max_body_bytes
                ),
            ));
        }
        let title = match title.trim() {
            "" => "Untitled",
            t => t,
        };
        let hash = hex_digest(&[title, body]);
        let base = slug(title);
        let mut jobs = self.jobs.lock().expect("jobs lock");
        let mut n = 1;
        let id = loop {
            let id = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            match jobs.get(&id) {
                Some(job) if job.content_hash == hash && job.state != JobState::Failed => {
                    return Ok(Submission {
                        job: job.clone(),
                        created: false,
                    })
                }
                Some(job) if job.content_hash == hash => break id,
                Some(_) => n += 1,
                None if self.store.storyline_path(&id).exists() => n += 1,
                None => break id,
            }
        };
        let job = IngestionJob::new(&id, title, &hash, self.now());
        self.store.save_job(&job)?;
        jobs.insert(id, job.clone());
        info!(narrative = %job.narrative_id, "ingestion queued");
        Ok(Submission { job, created: true })
    }

    /// Runs a queued job on the worker pool.
    pub fn spawn_ingestion(self: &Arc<Self>, job: &IngestionJob, body: String) {
        let app = Arc::clone(self);
        let (id, title) = (job.narrative_id.clone(), job.title.clone());
        tokio::spawn(async move {
            let Ok(_permit) = app.workers.clone().acquire_owned().await else { return };
            let worker = Arc::clone(&app);
            if let Err(e) = tokio::task::spawn_blocking(move || worker.run_ingestion(&id, &title, &body)).await {
                warn!("ingestion task panicked: {e}");
            }
        });
    }

    fn update_job(&self, narrative_id: &str, f: impl FnOnce(&mut IngestionJob, u64) -> anyhow::Result<()>) {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        let Some(job) = jobs.get_mut(narrative_id) else { return };
        let mut next = job.clone();
        match f(&mut next, self.now()) {
            Ok(()) => match self.store.save_job(&next) {
                Ok(()) => *job = next,
                Err(e) => warn!(narrative = %narrative_id, "could not persist job: {e}"),
            },
            Err(e) => warn!(narrative = %narrative_id, "{e}"),
        }
    }

    fn set_state(&self, narrative_id: &str, state: JobState, fraction: f64) {
        self.update_job(narrative_id, |job, now| Ok(job.transition(state, fraction, now)?));
    }

    /// Runs the whole pipeline for a queued job, blocking. On failure the
    /// job records the error and no storyline is kept.
    pub fn run_ingestion(&self, narrative_id: &str, title: &str, body: &str) -> ApiResult<Arc<Storyline>> {
        match self.ingest(narrative_id, title, body) {
            Ok(storyline) => {
                let storyline = Arc::new(storyline);
                self.storylines
                    .write()
                    .expect("storyline cache")
                    .insert(narrative_id.to_string(), Arc::clone(&storyline));
                self.set_state(narrative_id, JobState::Done, 1.0);
                info!(narrative = %narrative_id, "ingestion done");
                Ok(storyline)
            }
            Err(e) => {
                if let Err(d) = self.store.discard_storyline(narrative_id) {
                    warn!(narrative = %narrative_id, "could not discard storyline: {d}");
                }
                let message = e.message.clone();
                self.update_job(narrative_id, |job, now| Ok(job.fail(message, now)?));
                warn!(narrative = %narrative_id, "ingestion failed: {}", e.message);
                Err(e)
            }
        }
    }

    fn ingest(&self, narrative_id: &str, title: &str, body: &str) -> ApiResult<Storyline> {
        let narrative = NarrativeText::new(narrative_id, title, body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut progress = |stage, fraction| self.set_state(narrative_id, JobState::from(stage), fraction);
        let storyline =
            extract_storyline(&self.gateway, &narrative, &self.config.extraction, &mut progress).map_err(extraction_error)?;
        self.set_state(narrative_id, JobState::MediaPrefetch, 0.0);
        if self.config.prefetch_media {
            let requests = self.prefetch_requests(&storyline);
            for (k, request) in requests.iter().enumerate() {
                self.media.try_synthesize(request);
                self.set_state(narrative_id, JobState::MediaPrefetch, (k + 1) as f64 / requests.len() as f64);
            }
        }
        self.store.save_storyline(&storyline)?;
        Ok(storyline)
    }

    /// Portraits of specific characters and every scene background.
    fn prefetch_requests(&self, storyline: &Storyline) -> Vec<MediaRequest> {
        let style = &self.config.style;
        let portraits = storyline
            .characters
            .iter()
            .filter(|c| !c.nonspecific)
            .filter_map(|c| MediaRequest::portrait(c, style).ok());
        let scenes = storyline
            .environments
            .iter()
            .filter_map(|e| MediaRequest::scene(e, style).ok());
        portraits.chain(scenes).collect()
    }

    pub fn job(&self, narrative_id: &str) -> ApiResult<IngestionJob> {
        self.jobs
            .lock()
            .expect("jobs lock")
            .get(narrative_id)
            .cloned()
            .ok_or_else(|| not_found_narrative(narrative_id))
    }

    pub fn jobs(&self) -> Vec<IngestionJob> {
        self.jobs.lock().expect("jobs lock").values().cloned().collect()
    }

    pub fn storyline(&self, narrative_id: &str) -> ApiResult<Arc<Storyline>> {
        if let Some(s) = self.storylines.read().expect("storyline cache").get(narrative_id) {
            return Ok(Arc::clone(s));
        }
        if let Ok(job) = self.job(narrative_id) {
            match job.state {
                JobState::Done => {}
                JobState::Failed => {
                    return Err(ApiError::new(
                        409,
                        codes::NARRATIVE_FAILED,
                        format!(
                            "ingestion of {narrative_id} failed: {}",
                            job.error.as_deref().unwrap_or("unknown error")
                        ),
                    ))
                }
                state => {
                    return Err(ApiError::new(
                        409,
                        codes::NARRATIVE_NOT_READY,
                        format!("{narrative_id} is still being ingested ({state:?})"),
                    ))
                }
            }
        }
        let storyline = self
            .store
            .load_storyline(narrative_id)
            .map_err(|e| ApiError::internal(e.to_string()))?
            .ok_or_else(|| not_found_narrative(narrative_id))?;
        let storyline = Arc::new(storyline);
        self.storylines
            .write()
            .expect("storyline cache")
            .insert(narrative_id.to_string(), Arc::clone(&storyline));
        Ok(storyline)
    }

    pub fn characters(&self, narrative_id: &str) -> ApiResult<CharactersResponse> {
        let storyline = self.storyline(narrative_id)?;
        let playable: Vec<&CharacterProfile> = list_playable_characters(&storyline).map_err(ApiError::from)?;
        let summary = |c: &CharacterProfile, is_playable: bool| CharacterSummary {
            id: c.id.clone(),
            name: c.name.clone(),
            summary: c.summary.clone(),
            objective: c.objective.clone(),
            gender: c.gender,
            age_band: c.age_band,
            participation: storyline.participation(&c.id),
            playable: is_playable,
            nonspecific: c.nonspecific,
            portrait: self.portrait_ref(c),
        };
        let mut characters: Vec<CharacterSummary> = playable.iter().map(|c| summary(c, true)).collect();
        characters.extend(
            storyline
                .characters
                .iter()
                .filter(|c| !playable.iter().any(|p| p.id == c.id))
                .map(|c| summary(c, false)),
        );
        Ok(CharactersResponse {
            narrative_id: narrative_id.to_string(),
            total_events: storyline.events.len(),
            characters,
        })
    }

    // ---- media refs ----

    fn asset_ref(&self, request: &MediaRequest) -> AssetRef {
        let id = self.media.register(request);
        AssetRef {
            url: format!("/assets/{id}"),
            ready: self.media.cached(&id).is_some(),
            kind: request.kind,
            media_type: request.kind.media_type(),
            id,
        }
    }

    fn portrait_ref(&self, c: &CharacterProfile) -> Option<AssetRef> {
        MediaRequest::portrait(c, &self.config.style).ok().map(|r| self.asset_ref(&r))
    }

    fn speech_ref(&self, speaker: Option<&CharacterProfile>, text: &str) -> Option<AssetRef> {
        let speaker = speaker?;
        let voice = select_voice(speaker, &self.voices).ok()?;
        MediaRequest::speech(text, &voice).ok().map(|r| self.asset_ref(&r))
    }

    // ---- sessions ----

    /// Waits for this session's turn. Requests for one session are served
    /// in arrival order.
    pub async fn lock_session(&self, session_id: &str) -> OwnedMutexGuard<()> {
        let lock = Arc::clone(
            self.session_locks
                .lock()
                .expect("session locks")
                .entry(session_id.to_string())
                .or_default(),
        );
        lock.lock_owned().await
    }

    /// Runs a blocking session operation in its per-session turn.
    pub async fn with_session<T, F>(self: &Arc<Self>, session_id: &str, op: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&App) -> ApiResult<T> + Send + 'static,
    {
        let _turn = self.lock_session(session_id).await;
        let app = Arc::clone(self);
        tokio::task::spawn_blocking(move || op(&app))
            .await
            .map_err(|e| ApiError::internal(format!("session task failed: {e}")))?
    }

    fn lock_out(&self, session_id: &str, error: ApiError) -> ApiError {
        self.locked
            .lock()
            .expect("locked sessions")
            .insert(session_id.to_string(), error.message.clone());
        error
    }

    /// Loads and validates a persisted session. A session whose document
    /// cannot be trusted is locked until restart.
    pub fn load_session(&self, session_id: &str) -> ApiResult<(SessionEnvelope, Arc<Storyline>)> {
        if let Some(reason) = self.locked.lock().expect("locked sessions").get(session_id) {
            return Err(ApiError::new(423, codes::SESSION_LOCKED, format!("session {session_id} is locked: {reason}")));
        }
        let envelope = match self.store.load_envelope(session_id) {
            Ok(Some(env)) => env,
            Ok(None) => {
                return Err(ApiError::new(404, codes::SESSION_NOT_FOUND, format!("no session {session_id}")))
            }
            Err(e @ (StoreError::MigrationRequired { .. } | StoreError::Corrupt { .. })) => {
                return Err(self.lock_out(session_id, e.into()))
            }
            Err(e) => return Err(e.into()),
        };
        if envelope.session.id != session_id {
            let e = ApiError::new(423, codes::SESSION_LOCKED, format!("document holds session {}", envelope.session.id));
            return Err(self.lock_out(session_id, e));
        }
        let storyline = self.storyline(&envelope.session.narrative_id)?;
        if let Err(e) = Engine::new(&storyline, &self.gateway).validate(&envelope.state()) {
            return Err(self.lock_out(session_id, ApiError::from(e)));
        }
        Ok((envelope, storyline))
    }

    fn engine<'a>(&'a self, storyline: &'a Storyline) -> Engine<'a> {
        Engine::new(storyline, &self.gateway).with_config(self.config.engine)
    }

    pub fn create_session(&self, narrative_id: &str, character_id: &str, seed: Option<u64>) -> ApiResult<SessionResponse> {
        let storyline = self.storyline(narrative_id)?;
        let seed = seed.unwrap_or_else(|| self.now());
        let state = self.engine(&storyline).start_session(character_id, seed)?;
        let _creating = self.creating.lock().expect("create lock");
        if self.store.session_exists(&state.session.id) {
            return Err(ApiError::new(
                409,
                codes::SESSION_EXISTS,
                format!("session {} already exists; pick another seed", state.session.id),
            ));
        }
        let envelope = SessionEnvelope::new(state, self.now());
        self.store.save_envelope(&envelope)?;
        info!(session = %envelope.session.id, "session started");
        Ok(self.respond(&storyline, &envelope, None))
    }

    pub fn session(&self, session_id: &str) -> ApiResult<SessionResponse> {
        let (envelope, storyline) = self.load_session(session_id)?;
        Ok(self.respond(&storyline, &envelope, None))
    }

    pub fn envelope(&self, session_id: &str) -> ApiResult<SessionEnvelope> {
        self.load_session(session_id).map(|(env, _)| env)
    }

    /// Applies an engine operation and persists the result before
    /// answering. A failed operation leaves the stored session untouched.
    fn mutate<T>(
        &self,
        session_id: &str,
        op: impl FnOnce(&Engine<'_>, &mut SessionState) -> Result<T, narrativeplay::progression::EngineError>,
    ) -> ApiResult<(SessionEnvelope, Arc<Storyline>, T)> {
        let (mut envelope, storyline) = self.load_session(session_id)?;
        let mut state = envelope.state();
        let out = op(&self.engine(&storyline), &mut state)?;
        envelope.update(state, self.now());
        self.store.save_envelope(&envelope)?;
        Ok((envelope, storyline, out))
    }

    pub fn advance(&self, session_id: &str) -> ApiResult<SessionResponse> {
        let (envelope, storyline, _) = self.mutate(session_id, |engine, state| engine.advance_event(state))?;
        Ok(self.respond(&storyline, &envelope, None))
    }

    pub fn approach(&self, session_id: &str, agent_id: &str) -> ApiResult<SessionResponse> {
        let (envelope, storyline, reply) = self.mutate(session_id, |engine, state| engine.approach(state, agent_id))?;
        Ok(self.respond(&storyline, &envelope, reply.as_ref()))
    }

    pub fn say(&self, session_id: &str, agent_id: &str, text: &str) -> ApiResult<SessionResponse> {
        let (envelope, storyline, reply) = self.mutate(session_id, |engine, state| engine.say_to(state, agent_id, text))?;
        Ok(self.respond(&storyline, &envelope, Some(&reply)))
    }

    pub fn leave(&self, session_id: &str) -> ApiResult<SessionResponse> {
        let (envelope, storyline, _) = self.mutate(session_id, |engine, state| engine.leave_conversation(state))?;
        Ok(self.respond(&storyline, &envelope, None))
    }

    pub fn transcript(&self, session_id: &str) -> ApiResult<Vec<TranscriptEntry>> {
        self.load_session(session_id).map(|(env, _)| env.session.transcript)
    }

    fn respond(&self, storyline: &Storyline, envelope: &SessionEnvelope, reply: Option<&AgentResponse>) -> SessionResponse {
        let s = &envelope.session;
        let state = envelope.state();
        let engine = self.engine(storyline);
        let event = engine.current_view(&state).map(|view| {
            let visible = engine.visible_agents(&state);
            let skipped = s
                .transcript
                .iter()
                .rev()
                .find_map(|t| match t {
                    TranscriptEntry::EventPresented { event_index, skipped } if *event_index == view.event.index => {
                        Some(skipped.clone())
                    }
                    _ => None,
                })
                .unwrap_or_default();
            let participant = |c: &CharacterProfile| {
                let is_player = c.id == s.player_character_id;
                ParticipantView {
                    id: c.id.clone(),
                    name: c.name.clone(),
                    is_player,
                    position: if is_player { Position::Right } else { Position::Left },
                    approachable: visible.contains(&c.id),
                    portrait: self.portrait_ref(c),
                    favorability: s.favorability.get(&c.id).copied(),
                }
            };
            let (player, others): (Vec<&CharacterProfile>, Vec<&CharacterProfile>) =
                view.participants.iter().partition(|c| c.id == s.player_character_id);
            EventPanel {
                index: view.event.index,
                name: view.event.name.clone(),
                narration: view.event.description.clone(),
                location: view.event.location_name.clone(),
                scene: view
                    .environment
                    .as_ref()
                    .and_then(|e| MediaRequest::scene(e, &self.config.style).ok())
                    .map(|r| self.asset_ref(&r)),
                participants: others.into_iter().chain(player).map(participant).collect(),
                conversation: view
                    .conversation
                    .iter()
                    .map(|u| LineView {
                        speaker_id: u.speaker_id.clone(),
                        speaker_name: u.speaker_name.clone(),
                        content: u.content.clone(),
                        speech: self.speech_ref(u.speaker_id.as_deref().and_then(|id| storyline.character(id)), &u.content),
                    })
                    .collect(),
                skipped_events: skipped,
            }
        });
        let reply = reply.map(|r| {
            let agent = storyline.character(&r.agent_id);
            ReplyView {
                agent_id: r.agent_id.clone(),
                agent_name: agent.map_or_else(|| r.agent_id.clone(), |c| c.name.clone()),
                text: r.text.clone(),
                initiated: r.initiated,
                fallback: r.fallback,
                speech: self.speech_ref(agent, &r.text),
                favorability: s.favorability.get(&r.agent_id).copied(),
            }
        });
        SessionResponse {
            session_id: s.id.clone(),
            narrative_id: s.narrative_id.clone(),
            player_character_id: s.player_character_id.clone(),
            phase: s.phase,
            current_event_index: s.current_event_index,
            total_events: storyline.events.len(),
            conversation_partner: s.conversation_partner.clone(),
            favorability: s.favorability.clone(),
            event: if s.phase == Phase::Finished { None } else { event },
            reply,
            updated_at_ms: envelope.updated_at_ms,
        }
    }
}

fn not_found_narrative(narrative_id: &str) -> ApiError {
    ApiError::new(404, codes::NARRATIVE_NOT_FOUND, format!("no narrative {narrative_id}"))
}

fn extraction_error(e: ExtractionError) -> ApiError {
    match &e {
        ExtractionError::Provider(p) => {
            let mut err = ApiError::from(p);
            err.message = format!("extraction failed: {}", err.message);
            err
        }
        ExtractionError::NoEvents => ApiError::new(422, codes::NO_EVENTS, e.to_string()),
        _ => ApiError::new(422, codes::BAD_REQUEST, e.to_string()),
    }
}
