//! Camera-trap detection events to audited species micropayments.
//!
//! * [`geom`]: boxes, IoU, anchors, NMS, box-delta codec, label assignment
//! * [`loss`]: detector losses with analytic gradients, Adam, ReLU
//! * [`metrics`]: AP/mAP, AR@k, confusion matrices, ROC/AUC, fold protocol
//! * [`ingest`]: SMTP/MIME intake, VOC annotations, detector backends, replay
//! * [`ledger`]: species and guardian accounts with an append-only journal

pub mod clock;
pub mod exec;
pub mod geom;
pub mod ingest;
pub mod ledger;
pub mod loss;
pub mod metrics;

pub use exec::Exec;

/// The twelve species accounts, in the order they are usually reported.
pub const DEFAULT_SPECIES: [&str; 12] = [
    "Equus quagga",
    "Giraffa camelopardalis",
    "Canis mesomelas",
    "Crocuta crocuta",
    "Tragelaphus oryx",
    "Connochaetes taurinus",
    "Acinonyx jubatus",
    "Loxodonta africana",
    "Hystrix cristata",
    "Papio sp",
    "Panthera leo",
    "Rhinocerotidae",
];

/// Label used for images with no animal in them.
pub const BLANK_LABEL: &str = "Blank";
