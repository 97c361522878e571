//! Talks to a loopback `/generate` service that echoes the question back.

use std::thread;

use ragqa::client::{generate, Endpoint, GenerationRequest};
use tiny_http::{Header, Response, Server};

fn main() -> anyhow::Result<()> {
    let server = Server::http("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut req in server.incoming_requests().take(2) {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let v: serde_json::Value = serde_json::from_str(&body).unwrap();
            println!("server got {} {v}", req.url());
            let prompt = v["prompt"].as_str().unwrap_or_default();
            let question = prompt.rsplit("Question: ").next().unwrap_or_default().trim_end_matches(" Answer:");
            let reply = serde_json::json!({ "text": format!("You asked: {question}") }).to_string();
            let json = Header::from_bytes("Content-Type", "application/json").unwrap();
            req.respond(Response::from_string(reply).with_header(json)).unwrap();
        }
    });

    let endpoint = Endpoint::new(url);
    let reply = generate(&endpoint, &GenerationRequest::new("Question: Is fever after a vaccine normal? Answer:"))?;
    println!("text {:?} in {:?}", reply.text, reply.latency);

    let wide = GenerationRequest {
        beam_size: 8,
        ..GenerationRequest::new("Question: What lowers cholesterol? Answer:")
    };
    println!("text {:?}", generate(&endpoint, &wide)?.text);
    Ok(())
}
