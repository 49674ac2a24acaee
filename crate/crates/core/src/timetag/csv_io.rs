//! CSV form: header line `trial,channel,time_ps`, one record per line, all
//! columns plain decimal integers.

use super::{TimeTagError, TimeTagRecord};
use std::io::{Read, Write};

#[derive(serde::Serialize, serde::Deserialize)]
struct Row {
    trial: u32,
    channel: u8,
    time_ps: u64,
}

fn csv_err(e: csv::Error) -> TimeTagError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TimeTagError::Io(io),
        other => TimeTagError::Csv(format!("{other:?}")),
    }
}

pub fn export_csv<'a, W, I>(out: W, records: I) -> Result<(), TimeTagError>
where
    W: Write,
    I: IntoIterator<Item = &'a TimeTagRecord>,
{
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["trial", "channel", "time_ps"]).map_err(csv_err)?;
    for r in records {
        w.serialize(Row {
            trial: r.trial,
            channel: r.channel,
            time_ps: r.time,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_csv<R: Read>(src: R) -> Result<Vec<TimeTagRecord>, TimeTagError> {
    let mut rd = csv::Reader::from_reader(src);
    let headers = rd.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["trial", "channel", "time_ps"] {
        return Err(TimeTagError::Csv(format!("unexpected header {headers:?}")));
    }
    rd.deserialize::<Row>()
        .map(|row| {
            row.map(|r| TimeTagRecord::new(r.trial, r.channel, r.time_ps))
                .map_err(csv_err)
        })
        .collect()
}
