use serde::{Deserialize, Serialize};

use super::{format_gbp, parse_gbp, PayoutPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentRow {
    pub species: String,
    pub detections: u64,
    /// Pence.
    pub payment: u64,
}

/// Per-species guardian earnings.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PaymentTable {
    pub rows: Vec<PaymentRow>,
    pub total_detections: u64,
    pub total_payment: u64,
}

const HEADER: [&str; 3] = ["Species", "Detections", "Guardian Payment (GBP)"];

impl PaymentTable {
    pub fn from_rows(rows: Vec<PaymentRow>) -> Self {
        let total_detections = rows.iter().map(|r| r.detections).sum();
        let total_payment = rows.iter().map(|r| r.payment).sum();
        Self { rows, total_detections, total_payment }
    }

    pub fn payment_for(&self, species: &str) -> Option<u64> {
        self.rows.iter().find(|r| r.species == species).map(|r| r.payment)
    }

    /// CSV with a header row and a closing `Total` row; money as pounds.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([r.species.as_str(), &r.detections.to_string(), &format_gbp(r.payment)])
                .expect("in-memory write");
        }
        w.write_record([
            "Total",
            &self.total_detections.to_string(),
            &format_gbp(self.total_payment),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 fields")
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        let mut total: Option<(u64, u64)> = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            if rec.len() != 3 {
                return Err(format!("expected 3 fields, got {}", rec.len()));
            }
            if total.is_some() {
                return Err("rows after the Total row".into());
            }
            let detections: u64 = rec[1].parse().map_err(|_| format!("bad count {:?}", &rec[1]))?;
            let payment = parse_gbp(&rec[2]).ok_or_else(|| format!("bad amount {:?}", &rec[2]))?;
            if &rec[0] == "Total" {
                total = Some((detections, payment));
            } else {
                rows.push(PaymentRow { species: rec[0].to_string(), detections, payment });
            }
        }
        let table = Self::from_rows(rows);
        match total {
            Some(t) if t == (table.total_detections, table.total_payment) => Ok(table),
            Some(_) => Err("Total row does not match the rows".into()),
            None => Err("missing Total row".into()),
        }
    }
}

/// Guardian earnings for detection counts: `count * unit_amount` per species.
pub fn replay_counts(counts: &[(String, u64)], policy: &PayoutPolicy) -> PaymentTable {
    PaymentTable::from_rows(
        counts
            .iter()
            .map(|(species, n)| PaymentRow {
                species: species.clone(),
                detections: *n,
                payment: n * policy.unit_amount,
            })
            .collect(),
    )
}
