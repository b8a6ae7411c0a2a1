#![allow(dead_code)]

pub mod gradcheck;
pub mod invariants;
pub mod oracle;
pub mod table;
