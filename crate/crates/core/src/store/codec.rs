//! Row encoding shared by SSTables and the commit log:
//! `[u32 id_len][id][u32 text_len][text][u8 sentiment][u64 processed_at]`,
//! all integers little-endian, sentiment `0 = neg`, `1 = pos`.

use crate::classifier::Sentiment;

use super::Row;

pub(crate) fn encode_row(row: &Row, out: &mut Vec<u8>) {
    out.extend_from_slice(&(row.id.len() as u32).to_le_bytes());
    out.extend_from_slice(row.id.as_bytes());
    out.extend_from_slice(&(row.tweet_text.len() as u32).to_le_bytes());
    out.extend_from_slice(row.tweet_text.as_bytes());
    out.push(row.sentiment.index() as u8);
    out.extend_from_slice(&row.processed_at.to_le_bytes());
}

pub(crate) fn encoded_len(row: &Row) -> usize {
    4 + row.id.len() + 4 + row.tweet_text.len() + 1 + 8
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum Decode {
    Row(Row, usize),
    /// The buffer ends before the row does.
    Incomplete,
    Invalid(&'static str),
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Option<&'a [u8]> {
    let end = pos.checked_add(n)?;
    let slice = buf.get(*pos..end)?;
    *pos = end;
    Some(slice)
}

/// Decodes the row at the start of `buf`.
pub(crate) fn decode_row(buf: &[u8]) -> Decode {
    let mut pos = 0;
    macro_rules! field {
        ($n:expr) => {
            match take(buf, &mut pos, $n) {
                Some(s) => s,
                None => return Decode::Incomplete,
            }
        };
    }
    let id_len = u32::from_le_bytes(field!(4).try_into().unwrap()) as usize;
    let id = field!(id_len);
    let text_len = u32::from_le_bytes(field!(4).try_into().unwrap()) as usize;
    let text = field!(text_len);
    let sentiment = field!(1)[0];
    let processed_at = u64::from_le_bytes(field!(8).try_into().unwrap());

    let Ok(id) = std::str::from_utf8(id) else {
        return Decode::Invalid("row id is not utf-8");
    };
    let Ok(text) = std::str::from_utf8(text) else {
        return Decode::Invalid("tweet text is not utf-8");
    };
    let Some(sentiment) = Sentiment::from_index(sentiment as usize) else {
        return Decode::Invalid("bad sentiment byte");
    };
    Decode::Row(
        Row {
            id: id.to_string(),
            tweet_text: text.to_string(),
            sentiment,
            processed_at,
        },
        pos,
    )
}
