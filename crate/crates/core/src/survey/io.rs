use super::{AreaMeta, Record, SurveySample};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// One row of the area metadata file `area_id,N,Z`; `N` may be blank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaRow {
    pub area_id: u32,
    #[serde(rename = "N")]
    pub population: Option<u64>,
    #[serde(rename = "Z")]
    pub z: f64,
}

impl From<AreaRow> for AreaMeta {
    fn from(r: AreaRow) -> Self {
        AreaMeta { area_id: r.area_id, population: r.population, z: r.z }
    }
}

impl From<&AreaMeta> for AreaRow {
    fn from(a: &AreaMeta) -> Self {
        AreaRow { area_id: a.area_id, population: a.population, z: a.z }
    }
}

const SAMPLE_HEADER: [&str; 5] = ["area_id", "y", "x_survey", "x_census", "w_raw"];
const AREA_HEADER: [&str; 3] = ["area_id", "N", "Z"];

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::invalid(format!(
            "unexpected header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            expected.join(",")
        )));
    }
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &SAMPLE_HEADER)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_area_rows<R: Read>(reader: R) -> Result<Vec<AreaMeta>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &AREA_HEADER)?;
    rdr.deserialize::<AreaRow>()
        .map(|r| r.map(AreaMeta::from).map_err(Error::from))
        .collect()
}

pub fn read_areas(path: impl AsRef<Path>) -> Result<Vec<AreaMeta>> {
    read_area_rows(std::fs::File::open(path)?)
}

pub fn read_sample(sample: impl AsRef<Path>, areas: impl AsRef<Path>) -> Result<SurveySample> {
    let records = read_records(std::fs::File::open(sample)?)?;
    SurveySample::new(records, read_areas(areas)?)
}

pub fn write_records<W: Write>(writer: W, records: &[Record]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record(SAMPLE_HEADER)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_area_rows<W: Write>(writer: W, areas: &[AreaMeta]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(AREA_HEADER)?;
    for a in areas {
        let n = a.population.map(|n| n.to_string()).unwrap_or_default();
        wtr.write_record([a.area_id.to_string(), n, a.z.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sample(path: impl AsRef<Path>, sample: &SurveySample) -> Result<()> {
    write_records(std::fs::File::create(path)?, sample.records())
}

pub fn write_areas(path: impl AsRef<Path>, areas: &[AreaMeta]) -> Result<()> {
    write_area_rows(std::fs::File::create(path)?, areas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_csv() {
        let records = vec![
            Record { area_id: 2, y: 1, x_survey: 3, x_census: -0.25, w_raw: 12.5 },
            Record { area_id: 1, y: 0, x_survey: 1, x_census: 1.0 / 3.0, w_raw: 7.0 },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("area_id,y,x_survey,x_census,w_raw\n"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), records);

        let areas = vec![
            AreaMeta { area_id: 1, population: Some(500), z: 0.5 },
            AreaMeta { area_id: 2, population: None, z: -1.0 },
        ];
        let mut buf = Vec::new();
        write_area_rows(&mut buf, &areas).unwrap();
        assert_eq!(read_area_rows(buf.as_slice()).unwrap(), areas);
    }

    #[test]
    fn rejects_wrong_header() {
        let text = "area,y,x_survey,x_census,w_raw\n1,0,1,0.0,1.0\n";
        assert!(read_records(text.as_bytes()).is_err());
    }
}
