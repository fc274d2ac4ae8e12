#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock, Weak};

use async_trait::async_trait;
use collab::gateway::{self, Gateway};
use collab::provider::{
    ChatProvider, ChatRequest, ChatResponse, ProviderError, ScriptRule, ScriptedProvider,
};
use collab::session::{Session, SessionConfig};
use collab::timeline::Seq;

pub const AI_AGENTS: [&str; 3] = ["Peter", "Boshen", "Isabelle"];

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn golden_config_path() -> PathBuf {
    crate_dir().join("scenarios/tictactoe/session.toml")
}

pub fn golden_file(name: &str) -> String {
    std::fs::read_to_string(crate_dir().join("tests/golden").join(name)).expect("golden fixture")
}

pub fn golden_config() -> SessionConfig {
    SessionConfig::load(&golden_config_path()).expect("golden config loads")
}

pub fn script_rules(provider: &str) -> Vec<ScriptRule> {
    let path = crate_dir().join(format!("scenarios/tictactoe/{provider}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).expect("script")).expect("script parses")
}

/// One provider call as seen from outside the agent: the agent's cursor and
/// the timeline head at the moment the call was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallRecord {
    pub cursor: Seq,
    pub head: Seq,
    pub decision: bool,
}

/// Wraps a provider and records cursor/head for every call.
pub struct Probe {
    agent: String,
    inner: Arc<dyn ChatProvider>,
    session: OnceLock<Weak<Session>>,
    pub calls: Mutex<Vec<CallRecord>>,
}

impl Probe {
    pub fn new(agent: &str, inner: Arc<dyn ChatProvider>) -> Arc<Self> {
        Arc::new(Self {
            agent: agent.to_string(),
            inner,
            session: OnceLock::new(),
            calls: Mutex::new(Vec::new()),
        })
    }

    pub fn attach(&self, session: &Arc<Session>) {
        let _ = self.session.set(Arc::downgrade(session));
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }
}

#[async_trait]
impl ChatProvider for Probe {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if let Some(session) = self.session.get().and_then(Weak::upgrade) {
            let cursor = session
                .agent_state(&self.agent)
                .map(|s| s.cursor)
                .unwrap_or_default();
            self.calls.lock().unwrap().push(CallRecord {
                cursor,
                head: session.timeline().head(),
                // file-generation requests carry no institutional knowledge
                decision: request.system_prompt.contains("Institutional knowledge:"),
            });
        }
        self.inner.complete(request).await
    }
}

/// Golden session with each AI agent's scripted provider wrapped in a probe.
pub fn probed_golden() -> (Arc<Session>, Vec<(String, Arc<Probe>)>) {
    let config = golden_config();
    let mut builder = Session::builder(config.clone()).scripted(true);
    let mut probes = Vec::new();
    for agent in config.agents.iter().filter(|a| !a.is_human) {
        let pname = config.provider_name_for(agent).unwrap();
        let probe = Probe::new(
            &agent.name,
            Arc::new(ScriptedProvider::new(script_rules(&pname))),
        );
        builder = builder.provider(pname, probe.clone());
        probes.push((agent.name.clone(), probe));
    }
    let session = builder.build().expect("golden builds");
    for (_, p) in &probes {
        p.attach(&session);
    }
    (session, probes)
}

pub struct Served {
    pub base: String,
    pub gateway: Gateway,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Drop for Served {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn serve(gateway: Gateway) -> Served {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(gateway::serve(listener, gateway.clone(), async {
        let _ = rx.await;
    }));
    Served {
        base,
        gateway,
        stop: Some(tx),
    }
}

pub const ADMIN: &str = "test-admin-token";

/// Config for gateway tests: one AI agent that always declines, one human.
pub fn small_config() -> SessionConfig {
    SessionConfig::from_toml(
        r#"
seed = 7
clock_mode = "real"

[providers.s]
kind = "scripted"
rules = [{ response = "ACTION: NONE\nREASONING: nothing to add", repeat = true }]

[[agents]]
name = "Peter"
role_name = "CEO"
persona = "asset:persona_ceo"

[[agents]]
name = "Benjamin"
role_name = "Client"
is_human = true
"#,
    )
    .expect("small config")
}
