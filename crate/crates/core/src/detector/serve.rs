use std::io::{BufRead, Write};

use super::protocol::{decode_b64_png, Message, WireDetection};
use super::Detector;
use crate::error::Result;

/// Runs the adapter side of the protocol: handshake, then one reply line per
/// request line until `input` closes. Bad requests get an `error` line and
/// the loop continues.
pub fn serve<D: Detector + ?Sized, R: BufRead, W: Write>(detector: &mut D, input: R, mut output: W) -> Result<()> {
    writeln!(output, "{}", Message::Handshake(detector.handshake().clone()).to_line())?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::parse(&line) {
            Ok(Message::Infer { id, image_png_b64 }) => match decode_b64_png(&image_png_b64) {
                Ok(image) => match detector.infer(&image) {
                    Ok(dets) => Message::Detections { id, detections: dets.iter().map(WireDetection::from).collect() },
                    Err(e) => Message::Error { id: Some(id), message: e.to_string() },
                },
                Err(e) => Message::Error { id: Some(id), message: e.to_string() },
            },
            Ok(other) => Message::Error { id: None, message: format!("unexpected `{}` message; only `infer` is accepted", other.kind()) },
            Err(e) => Message::Error { id: salvage_id(&line), message: e.to_string() },
        };
        writeln!(output, "{}", reply.to_line())?;
        output.flush()?;
    }
    Ok(())
}

/// The request id of an otherwise malformed request, when it can be read.
fn salvage_id(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("id")?.as_u64()
}
