#![allow(dead_code)]

pub mod dag_oracle;
pub mod query_oracle;
pub mod tape;
