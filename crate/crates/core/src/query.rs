//! Keyword statistics over the newest stored rows and the HTTP API that
//! serves them.
//!
//! Counts are token occurrences: a tweet that uses a word twice adds two.

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;

use crate::classifier::{Sentiment, TokenPipeline};
use crate::store::{ColumnFamily, Row};

pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_LIMIT: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("keyword is empty")]
    EmptyKeyword,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordCount {
    pub keyword: String,
    pub positive_count: u64,
    pub negative_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankedKeyword {
    pub keyword: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TopKeywords {
    pub positive: Vec<RankedKeyword>,
    pub negative: Vec<RankedKeyword>,
}

/// Token occurrences per sentiment (`[negative, positive]`).
pub fn keyword_counts(rows: &[Row], pipeline: &TokenPipeline) -> BTreeMap<String, [u64; 2]> {
    let mut counts: BTreeMap<String, [u64; 2]> = BTreeMap::new();
    for row in rows {
        for token in pipeline.preprocess(&row.tweet_text) {
            counts.entry(token).or_default()[row.sentiment.index()] += 1;
        }
    }
    counts
}

fn ranked(counts: &BTreeMap<String, [u64; 2]>, class: Sentiment, limit: usize) -> Vec<RankedKeyword> {
    let mut list: Vec<RankedKeyword> = counts
        .iter()
        .filter(|(_, c)| c[class.index()] > 0)
        .map(|(k, c)| RankedKeyword {
            keyword: k.clone(),
            count: c[class.index()],
        })
        .collect();
    list.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.keyword.cmp(&b.keyword)));
    list.truncate(limit);
    list
}

fn check_positive(name: &str, value: usize) -> Result<(), QueryError> {
    if value == 0 {
        Err(QueryError::InvalidParameter(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn window_rows(cf: &ColumnFamily, window: usize) -> Result<Vec<Row>, QueryError> {
    check_positive("window", window)?;
    cf.scan_latest(window)
        .map_err(|e| QueryError::StoreUnavailable(e.to_string()))
}

/// The `limit` most frequent tokens of each sentiment among the `window`
/// newest rows, most frequent first, ties alphabetical.
pub fn top_keywords(
    cf: &ColumnFamily,
    pipeline: &TokenPipeline,
    window: usize,
    limit: usize,
) -> Result<TopKeywords, QueryError> {
    check_positive("limit", limit)?;
    let counts = keyword_counts(&window_rows(cf, window)?, pipeline);
    Ok(TopKeywords {
        positive: ranked(&counts, Sentiment::Positive, limit),
        negative: ranked(&counts, Sentiment::Negative, limit),
    })
}

/// Occurrences of `keyword` (trimmed and lowercased) among the `window`
/// newest rows.
pub fn search_keyword(
    cf: &ColumnFamily,
    pipeline: &TokenPipeline,
    keyword: &str,
    window: usize,
) -> Result<KeywordCount, QueryError> {
    let keyword = keyword.trim().to_lowercase();
    if keyword.is_empty() {
        return Err(QueryError::EmptyKeyword);
    }
    let rows = window_rows(cf, window)?;
    let mut count = [0u64; 2];
    for row in &rows {
        let hits = pipeline
            .preprocess(&row.tweet_text)
            .iter()
            .filter(|t| **t == keyword)
            .count() as u64;
        count[row.sentiment.index()] += hits;
    }
    Ok(KeywordCount {
        keyword,
        positive_count: count[Sentiment::Positive.index()],
        negative_count: count[Sentiment::Negative.index()],
    })
}

#[derive(Clone)]
pub struct QueryState {
    pub cf: Arc<ColumnFamily>,
    pub pipeline: Arc<TokenPipeline>,
}

impl IntoResponse for QueryError {
    fn into_response(self) -> Response {
        let status = match self {
            QueryError::StoreUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            QueryError::EmptyKeyword | QueryError::InvalidParameter(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

fn param(params: &HashMap<String, String>, name: &str, default: usize) -> Result<usize, QueryError> {
    match params.get(name) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| QueryError::InvalidParameter(format!("{name} must be a positive integer, got {v:?}"))),
    }
}

#[derive(Serialize)]
struct SearchBody {
    keyword: String,
    positive: u64,
    negative: u64,
}

async fn top_keywords_handler(
    State(state): State<QueryState>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<TopKeywords>, QueryError> {
    let window = param(&params, "window", DEFAULT_WINDOW)?;
    let limit = param(&params, "limit", DEFAULT_LIMIT)?;
    tokio::task::spawn_blocking(move || top_keywords(&state.cf, &state.pipeline, window, limit))
        .await
        .map_err(|e| QueryError::StoreUnavailable(e.to_string()))?
        .map(Json)
}

async fn search_handler(
    State(state): State<QueryState>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<SearchBody>, QueryError> {
    let window = param(&params, "window", DEFAULT_WINDOW)?;
    let keyword = params.get("keyword").cloned().unwrap_or_default();
    let found = tokio::task::spawn_blocking(move || search_keyword(&state.cf, &state.pipeline, &keyword, window))
        .await
        .map_err(|e| QueryError::StoreUnavailable(e.to_string()))??;
    Ok(Json(SearchBody {
        keyword: found.keyword,
        positive: found.positive_count,
        negative: found.negative_count,
    }))
}

pub fn router(state: QueryState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/top-keywords", get(top_keywords_handler))
        .route("/search", get(search_handler))
        .with_state(state)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: QueryState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr`, reporting the bound address (useful with port 0).
pub async fn bind(addr: SocketAddr) -> std::io::Result<(tokio::net::TcpListener, SocketAddr)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreOptions;

    fn cf(dir: &std::path::Path, rows: &[(&str, &str, Sentiment, u64)]) -> ColumnFamily {
        let cf = ColumnFamily::recover(dir.join("ks/cf"), StoreOptions::default()).unwrap();
        for (id, text, s, ts) in rows {
            cf.write(Row::new(*id, *text, *s, *ts)).unwrap();
        }
        cf
    }

    #[test]
    fn empty_store_gives_empty_lists() {
        let dir = tempfile::tempdir().unwrap();
        let cf = cf(dir.path(), &[]);
        let top = top_keywords(&cf, &TokenPipeline::english(), 200, 10).unwrap();
        assert_eq!(top, TopKeywords::default());
    }

    #[test]
    fn three_positive_rows_share_a_word() {
        let dir = tempfile::tempdir().unwrap();
        let p = Sentiment::Positive;
        let cf = cf(
            dir.path(),
            &[("1", "great game", p, 1), ("2", "great food", p, 2), ("3", "Great!", p, 3)],
        );
        let top = top_keywords(&cf, &TokenPipeline::english(), 200, 10).unwrap();
        assert_eq!(
            top.positive[0],
            RankedKeyword {
                keyword: "great".into(),
                count: 3
            }
        );
        assert!(top.negative.is_empty());
        let found = search_keyword(&cf, &TokenPipeline::english(), "  GREAT ", 200).unwrap();
        assert_eq!((found.positive_count, found.negative_count), (3, 0));
    }

    #[test]
    fn occurrences_not_rows() {
        let dir = tempfile::tempdir().unwrap();
        let n = Sentiment::Negative;
        let cf = cf(
            dir.path(),
            &[
                ("1", "rain rain go away", n, 1),
                ("2", "sunny", Sentiment::Positive, 2),
                ("3", "cold", n, 3),
            ],
        );
        let tp = TokenPipeline::english();
        let found = search_keyword(&cf, &tp, "rain", 200).unwrap();
        assert_eq!((found.positive_count, found.negative_count), (0, 2));
        let absent = search_keyword(&cf, &tp, "snow", 200).unwrap();
        assert_eq!((absent.positive_count, absent.negative_count), (0, 0));
        assert!(matches!(search_keyword(&cf, &tp, "  ", 200), Err(QueryError::EmptyKeyword)));
    }

    #[test]
    fn ties_are_alphabetical_and_limit_applies() {
        let dir = tempfile::tempdir().unwrap();
        let p = Sentiment::Positive;
        let cf = cf(dir.path(), &[("1", "zebra apple mango", p, 1), ("2", "zebra", p, 2)]);
        let top = top_keywords(&cf, &TokenPipeline::english(), 200, 2).unwrap();
        let words: Vec<&str> = top.positive.iter().map(|k| k.keyword.as_str()).collect();
        assert_eq!(words, ["zebra", "apple"]);
        assert!(top_keywords(&cf, &TokenPipeline::english(), 200, 0).is_err());
        assert!(top_keywords(&cf, &TokenPipeline::english(), 0, 1).is_err());
    }
}
