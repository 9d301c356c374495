use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::{check_bundle, Collector, ExportBundle, IngestError, ParseOptions, ParseReport, SkipReason};
use crate::config::DateOrder;
use crate::model::{Platform, WatchEvent};

/// Parses Netflix viewing-history CSVs.
///
/// Accepts the per-profile `NetflixViewingHistory.csv` (`Title,Date`) and the
/// account-level `ViewingActivity.csv` (`Start Time`, `Title`, ...). Every
/// column other than the title, the time and the supplemental-video marker is
/// ignored, which keeps profile names, devices and countries out of the
/// dataset.
pub fn parse_netflix(
    bundle: &ExportBundle,
    opts: &ParseOptions,
) -> Result<(Vec<WatchEvent>, ParseReport), IngestError> {
    check_bundle(bundle, Platform::Netflix, opts)?;
    let mut out = Collector::new(Platform::Netflix, opts);
    for file in &bundle.files {
        let text = String::from_utf8_lossy(&file.bytes);
        let text = super::strip_bom(&text);
        let mut reader =
            csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| IngestError::malformed(&file.name, format!("unreadable header: {e}")))?
            .clone();
        let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let title_col = find("title").ok_or_else(|| IngestError::malformed(&file.name, "missing Title column"))?;
        let time_col = match (find("date"), find("start time")) {
            (Some(c), _) => TimeColumn::Date(c),
            (None, Some(c)) => TimeColumn::StartTime(c),
            (None, None) => return Err(IngestError::malformed(&file.name, "missing Date column")),
        };
        let supplemental_col = find("supplemental video type");

        for row in reader.records() {
            let Ok(row) = row else {
                out.skip(SkipReason::MalformedRecord);
                continue;
            };
            if supplemental_col.and_then(|c| row.get(c)).is_some_and(|v| !v.trim().is_empty()) {
                out.skip(SkipReason::SupplementalVideo);
                continue;
            }
            let title = row.get(title_col).map(str::trim).unwrap_or("");
            if title.is_empty() {
                out.skip(SkipReason::MissingTitle);
                continue;
            }
            let naive = match time_col {
                TimeColumn::Date(c) => row.get(c).and_then(|d| parse_date(d, opts.date_order)).map(|d| d.and_time(NaiveTime::MIN)),
                TimeColumn::StartTime(c) => row.get(c).and_then(|d| parse_datetime(d, opts.date_order)),
            };
            match naive.and_then(|n| super::local_to_utc(n, opts.timezone)) {
                Some(t) => out.push(Some(title.to_string()), None, t),
                None => out.skip(SkipReason::BadDate),
            }
        }
    }
    out.finish()
}

#[derive(Clone, Copy)]
enum TimeColumn {
    Date(usize),
    StartTime(usize),
}

/// Date-only values. Slash/dot/dash separated dates follow `order`; ISO
/// `YYYY-MM-DD` is always accepted.
pub(crate) fn parse_date(s: &str, order: DateOrder) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    let formats: &[&str] = match order {
        DateOrder::DayFirst => &["%d/%m/%Y", "%d.%m.%Y", "%d-%m-%Y", "%d/%m/%y", "%d.%m.%y"],
        DateOrder::MonthFirst => &["%m/%d/%Y", "%m-%d-%Y", "%m/%d/%y"],
    };
    formats.iter().find_map(|f| {
        // chrono reads "23" under %Y as year 23 and "2023" under %y as 20;
        // pick the format by the year's width.
        let want = if f.ends_with("%y") { 2 } else { 4 };
        let year_len = s.rsplit(['/', '.', '-']).next().map_or(0, str::len);
        if year_len != want {
            return None;
        }
        NaiveDate::parse_from_str(s, f).ok()
    })
}

fn parse_datetime(s: &str, order: DateOrder) -> Option<NaiveDateTime> {
    let s = s.trim();
    for f in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t);
        }
    }
    let (date, time) = s.split_once(' ')?;
    let date = parse_date(date, order)?;
    let time = NaiveTime::parse_from_str(time.trim(), "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(time.trim(), "%H:%M"))
        .ok()?;
    Some(date.and_time(time))
}
