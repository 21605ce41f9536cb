pub mod query_oracle;
