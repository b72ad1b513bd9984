#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde_json::{json, Value};

/// A request as the stub saw it.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
    pub at: Instant,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: Value) -> Self {
        Self {
            status,
            headers: vec![],
            body: body.to_string(),
        }
    }

    pub fn with_header(mut self, k: &str, v: &str) -> Self {
        self.headers.push((k.into(), v.into()));
        self
    }
}

pub fn openai_text(text: &str) -> Reply {
    Reply::json(
        200,
        json!({"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]}),
    )
}

pub fn gemini_text(text: &str) -> Reply {
    Reply::json(
        200,
        json!({"candidates": [{"content": {"role": "model", "parts": [{"text": text}]}, "finishReason": "STOP"}]}),
    )
}

type Handler = dyn Fn(&Recorded) -> Reply + Send + Sync;

/// Local HTTP/1.1 server that answers from a script, then from a handler.
/// Speaks both the chat-completions and the generateContent shapes.
pub struct StubServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>, fallback: impl Fn(&Recorded) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let script = Arc::new(Mutex::new(script.into_iter()));
        let fallback: Arc<Handler> = Arc::new(fallback);
        let log = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, script, fallback) = (log.clone(), script.clone(), fallback.clone());
                std::thread::spawn(move || {
                    let _ = serve(stream, &log, &script, fallback.as_ref());
                });
            }
        });
        Self { url, requests }
    }

    /// Echoes a fixed answer in whichever shape the request path implies.
    pub fn echo(text: &'static str) -> Self {
        Self::start(vec![], move |r| {
            if r.path.contains(":generateContent") {
                gemini_text(text)
            } else {
                openai_text(text)
            }
        })
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(
    stream: TcpStream,
    log: &Mutex<Vec<Recorded>>,
    script: &Mutex<std::vec::IntoIter<Reply>>,
    fallback: &Handler,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let at = Instant::now();
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                len = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let rec = Recorded {
        method,
        path,
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
        at,
    };
    log.lock().unwrap().push(rec.clone());
    let next = script.lock().unwrap().next();
    let reply = next.unwrap_or_else(|| fallback(&rec));
    let mut out = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(&reply.body);
    let mut stream = stream;
    stream.write_all(out.as_bytes())?;
    stream.flush()
}

use std::collections::BTreeMap;

use stanceprobe::prompting::{render_initial, render_opposing, Phase, PromptTemplate, Stance};
use stanceprobe::provider::{prompt_hash, MockPolicy, ScriptedOutput};
use stanceprobe::QuestionBank;

/// Answer value to the default token for `language`.
pub fn token_for(language: &str, a: i8) -> String {
    let t = PromptTemplate::default_for(language, Phase::Initial).unwrap();
    match a {
        1 => t.affirm_token,
        -1 => t.negate_token,
        _ => match language {
            "ja" => "場合によります。".into(),
            "fr" => "Cela dépend.".into(),
            "es" => "Depende.".into(),
            _ => "It depends.".into(),
        },
    }
}

/// A scripted mock that answers question `q` in round `r` with `answers[q][r - 1]`.
pub fn scripted(
    bank: &QuestionBank,
    language: &str,
    phase: Phase,
    stances: &BTreeMap<u32, Stance>,
    answers: &BTreeMap<u32, Vec<i8>>,
) -> MockPolicy {
    let t = PromptTemplate::default_for(language, phase).unwrap();
    let mut outputs = BTreeMap::new();
    for q in bank.questions() {
        let prompt = match phase {
            Phase::Initial => render_initial(q, &t).unwrap(),
            Phase::Opposing => render_opposing(q, &t, stances[&q.id]).unwrap(),
        };
        let per_round = answers[&q.id].iter().map(|&a| token_for(language, a)).collect();
        outputs.insert(prompt_hash(&prompt), ScriptedOutput::PerRound(per_round));
    }
    MockPolicy::Scripted { outputs }
}

/// Brute-force per-question bias, unbiased variance and willingness.
pub fn brute_force(answers: &BTreeMap<u32, Vec<i8>>) -> BTreeMap<u32, (f64, Option<f64>, Option<f64>)> {
    let mut out = BTreeMap::new();
    let mut max_var = 0.0f64;
    for (q, a) in answers {
        let n = a.len() as f64;
        let mean = a.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = (a.len() > 1).then(|| a.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0));
        if let Some(v) = var {
            max_var = max_var.max(v);
        }
        out.insert(*q, (mean, var, None));
    }
    for (_, (_, var, w)) in out.iter_mut() {
        *w = var.map(|v| if max_var == 0.0 { 1.0 } else { 1.0 - v / max_var });
    }
    out
}

pub fn brute_shift(b_ini: f64, b_opp: f64) -> f64 {
    if b_ini >= 0.0 {
        b_ini - b_opp
    } else {
        b_opp - b_ini
    }
}

pub fn brute_strong_neutral(b: f64, w: Option<f64>) -> bool {
    // thresholds compared with a tolerance well below answer granularity
    matches!(w, Some(w) if b.abs() <= 0.2 + 1e-9 && w >= 0.8 - 1e-9)
}

/// Parses a run's metrics.csv into rows keyed by question id.
pub fn read_metrics(csv_text: &str) -> BTreeMap<u32, BTreeMap<String, String>> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers().unwrap().clone();
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        let row: BTreeMap<String, String> = headers.iter().map(String::from).zip(rec.iter().map(String::from)).collect();
        out.insert(row["question_id"].parse().unwrap(), row);
    }
    out
}
