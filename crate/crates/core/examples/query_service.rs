//! Starts the HTTP search service on a free port, sends one request over a
//! plain TCP socket and shuts down.

use std::io::{Read, Write};
use std::net::TcpStream;

use minaret::encoder::{BiEncoder, EncoderConfig};
use minaret::retrieval::{build_index, Corpus};
use minaret::service::{start, SearchService};
use minaret::synthetic::word_level_tokenizer;

fn main() -> minaret::Result<()> {
    let corpus = Corpus::parse_tsv("1:1\tin the name of god\n2:255\tgod there is no deity except him\n112:1\tsay he is god the one\n")?;
    let texts: Vec<&str> = corpus.entries().iter().map(|(_, t)| t.as_str()).collect();
    let encoder = BiEncoder::init(word_level_tokenizer(&texts)?, 16, EncoderConfig::default(), 4)?;
    let index = build_index(&encoder, &corpus)?;
    let running = start(SearchService::new(index, encoder)?, "127.0.0.1:0", 2)?;
    println!("listening on {}", running.addr());

    let body = r#"{"query": "say he is god the one", "k": 2}"#;
    let mut stream = TcpStream::connect(running.addr())?;
    write!(
        stream,
        "POST /search HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut response = String::new();
    stream.read_to_string(&mut response)?;
    println!("{}", response.split("\r\n\r\n").nth(1).unwrap_or(""));
    running.stop();
    Ok(())
}
