//! Parsers for the two machine-readable reply shapes: space-separated
//! ticker lists and `TICKER: weight` strings.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::symbol::Symbol;

use super::GatewayError;

/// Parse a ticker-extraction reply into symbols.
///
/// The characters `, . ; ( ) $` separate or decorate tokens in noisy
/// replies; they are treated as whitespace. Tokens are uppercased and
/// tokens with no letters (list numbering and the like) are dropped.
pub fn parse_ticker_symbols(text: &str) -> Result<Vec<Symbol>, GatewayError> {
    let cleaned: String = text
        .chars()
        .map(|c| if matches!(c, ',' | '.' | ';' | '(' | ')' | '$') { ' ' } else { c })
        .collect();
    let symbols: Vec<Symbol> = cleaned
        .split_whitespace()
        .filter(|tok| tok.chars().any(|c| c.is_ascii_alphabetic()))
        .map(Symbol::new)
        .collect();
    if symbols.is_empty() {
        return Err(GatewayError::ParseError(format!(
            "no ticker symbols in reply {:?}",
            preview(text)
        )));
    }
    Ok(symbols)
}

fn weight_pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"([A-Za-z][A-Za-z0-9.\-]*)["']?\s*:\s*(-?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?)"#,
        )
        .expect("valid weight-pair regex")
    })
}

/// Extract all `SYMBOL: float` pairs from a weight-extraction reply.
///
/// Tolerates surrounding whitespace and trailing prose. Duplicate symbols
/// keep the last occurrence with a warning. Weights are returned raw
/// (unnormalized).
pub fn parse_weight_string(text: &str) -> Result<BTreeMap<Symbol, f64>, GatewayError> {
    let mut weights = BTreeMap::new();
    let mut found = 0usize;
    for cap in weight_pair_regex().captures_iter(text) {
        let symbol = Symbol::new(&cap[1]);
        let value: f64 = cap[2]
            .parse()
            .map_err(|e| GatewayError::ParseError(format!("bad weight {:?}: {e}", &cap[2])))?;
        if value < 0.0 {
            return Err(GatewayError::NegativeWeight {
                symbol,
                weight: value,
            });
        }
        found += 1;
        if weights.insert(symbol.clone(), value).is_some() {
            log::warn!("duplicate weight for {symbol}; keeping the last occurrence");
        }
    }
    if found == 0 {
        return Err(GatewayError::ParseError(format!(
            "no TICKER: weight pairs in reply {:?}",
            preview(text)
        )));
    }
    Ok(weights)
}

fn preview(text: &str) -> &str {
    let end = text
        .char_indices()
        .nth(60)
        .map_or(text.len(), |(i, _)| i);
    &text[..end]
}
