#![no_main]

use imaginenet::pipeline::{ComparisonTable, RunRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(record) = RunRecord::from_json_str(text) else { return };
    let again = RunRecord::from_json_str(&record.to_json_string().unwrap()).unwrap();
    assert_eq!(again.tag, record.tag);
    let table = ComparisonTable::from_records(&[record]);
    table.to_csv();
    table.to_text();
});
