//! The four-prompt protocol: stock selection, ticker extraction, weight
//! assignment, weight extraction.
//!
//! Each prompt is sent as an independent stateless request; where the
//! wording refers to "the previous response" the prior reply is embedded
//! through the `{output}` placeholder.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::symbol::Symbol;
use crate::universe::SectorSpec;

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    SelectStocks,
    ExtractTickers,
    AssignWeights,
    ExtractWeights,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PromptKind::SelectStocks => "select_stocks",
            PromptKind::ExtractTickers => "extract_tickers",
            PromptKind::AssignWeights => "assign_weights",
            PromptKind::ExtractWeights => "extract_weights",
        };
        f.write_str(s)
    }
}

const SELECT_STOCKS_TEMPLATE: &str = "Using a range of investing principles taken from leading \
funds, create a theoretical fund comprising of at least {tickers} stocks (mention their tickers) \
from the {sector_index} with the goal to outperform the {sector_index} (S&P 500 sector index).";

const EXTRACT_TICKERS_TEMPLATE: &str = "Extract only the ticker symbols of the stocks comprising \
the fund from the previous response. In your response to this prompt, list only the ticker \
symbols separated by spaces.\n\n{output}";

const ASSIGN_WEIGHTS_TEMPLATE: &str = "Assume you're designing a theoretical model portfolio \
from these {sector_index} stocks: {ticker_list}. Provide a hypothetical example of how you might \
distribute the weightage of these stocks (normalized i.e weights should add up to 1.00) in the \
portfolio to potentially outperform the {sector_index} index. Also mention the underlying \
strategy or logic which you used to assign these weights.";

const EXTRACT_WEIGHTS_TEMPLATE: &str = "Extract tickers of stocks and corresponding weights as a \
single comma \", \" separated string, with the weights expressed as floats: {output}. Provide a \
list of type TICKER: weight, no extra symbols used, and no extra text or explanation. Example \
output: \"AAPL: 0.2, MSFT: 0.3, GOOGL: 0.5\"";

/// A prompt template with named placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn for_kind(kind: PromptKind) -> Self {
        let text = match kind {
            PromptKind::SelectStocks => SELECT_STOCKS_TEMPLATE,
            PromptKind::ExtractTickers => EXTRACT_TICKERS_TEMPLATE,
            PromptKind::AssignWeights => ASSIGN_WEIGHTS_TEMPLATE,
            PromptKind::ExtractWeights => EXTRACT_WEIGHTS_TEMPLATE,
        };
        PromptTemplate { kind, text }
    }
}

/// Values substituted into a template.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptContext<'a> {
    /// Minimum number of stocks requested from the model.
    pub portfolio_size: usize,
    /// Tickers the model must weight (assign_weights).
    pub ticker_list: Option<&'a [Symbol]>,
    /// The prior model reply embedded into extraction prompts.
    pub prior_output: Option<&'a str>,
}

const PLACEHOLDERS: [&str; 4] = ["{tickers}", "{sector_index}", "{ticker_list}", "{output}"];

/// Render one of the four prompts for a sector.
pub fn render_prompt(
    kind: PromptKind,
    sector: &SectorSpec,
    ctx: &PromptContext<'_>,
) -> Result<String, GatewayError> {
    let template = PromptTemplate::for_kind(kind);
    let mut text = template.text.to_string();

    // the selection prompt names the sector in running text
    // ("S&P 500-20 industrials sector"); the weighting prompt uses the
    // registry capitalization ("S&P 500-20 Industrials")
    let sector_phrase = match kind {
        PromptKind::SelectStocks => format!(
            "{} {} sector",
            sector.index_ticker,
            sector.sector_name.to_lowercase()
        ),
        _ => format!("{} {}", sector.index_ticker, sector.sector_name),
    };
    text = text.replace("{sector_index}", &sector_phrase);

    if text.contains("{tickers}") {
        if ctx.portfolio_size == 0 {
            return Err(GatewayError::MissingPlaceholder {
                kind,
                placeholder: "tickers",
            });
        }
        text = text.replace("{tickers}", &ctx.portfolio_size.to_string());
    }
    if text.contains("{ticker_list}") {
        let list = ctx.ticker_list.filter(|l| !l.is_empty()).ok_or(
            GatewayError::MissingPlaceholder {
                kind,
                placeholder: "ticker_list",
            },
        )?;
        let joined = list
            .iter()
            .map(Symbol::as_str)
            .collect::<Vec<_>>()
            .join(" ");
        text = text.replace("{ticker_list}", &joined);
    }
    if text.contains("{output}") {
        let output = ctx
            .prior_output
            .ok_or(GatewayError::MissingPlaceholder {
                kind,
                placeholder: "output",
            })?;
        text = text.replace("{output}", output);
    }
    debug_assert!(
        PLACEHOLDERS.iter().all(|p| !text.contains(p)),
        "unresolved placeholder in rendered prompt"
    );
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn industrials() -> SectorSpec {
        SectorSpec {
            sector_name: "Industrials".to_string(),
            index_ticker: Symbol::new("S&P 500-20"),
            constituents: BTreeSet::from([Symbol::new("GE")]),
        }
    }

    #[test]
    fn selection_prompt_names_sector_index() {
        let ctx = PromptContext {
            portfolio_size: 20,
            ..Default::default()
        };
        let text = render_prompt(PromptKind::SelectStocks, &industrials(), &ctx).unwrap();
        assert!(text.contains("S&P 500-20 industrials sector"));
        assert!(text.contains("at least 20 stocks"));
        assert!(!text.contains('{'));
    }

    #[test]
    fn weight_extraction_prompt_ends_with_format_example() {
        let ctx = PromptContext {
            prior_output: Some("model reply"),
            ..Default::default()
        };
        let text = render_prompt(PromptKind::ExtractWeights, &industrials(), &ctx).unwrap();
        assert!(text.ends_with("Example output: \"AAPL: 0.2, MSFT: 0.3, GOOGL: 0.5\""));
        assert!(text.contains("model reply"));
    }

    #[test]
    fn assign_weights_requires_tickers() {
        let err = render_prompt(
            PromptKind::AssignWeights,
            &industrials(),
            &PromptContext::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::MissingPlaceholder {
                placeholder: "ticker_list",
                ..
            }
        ));
    }

    #[test]
    fn assign_weights_space_joins_tickers() {
        let tickers = [Symbol::new("AB"), Symbol::new("CD"), Symbol::new("EFG")];
        let ctx = PromptContext {
            ticker_list: Some(&tickers),
            ..Default::default()
        };
        let text = render_prompt(PromptKind::AssignWeights, &industrials(), &ctx).unwrap();
        assert!(text.contains("S&P 500-20 Industrials stocks: AB CD EFG."));
        assert!(text.contains("outperform the S&P 500-20 Industrials index"));
    }

    #[test]
    fn extract_tickers_requires_prior_output() {
        let err = render_prompt(
            PromptKind::ExtractTickers,
            &industrials(),
            &PromptContext::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GatewayError::MissingPlaceholder {
                placeholder: "output",
                ..
            }
        ));
    }
}
