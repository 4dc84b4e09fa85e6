// SPDX-License-Identifier: Apache-2.0

//! Shared fixtures for the criterion benches.

use netkv_core::wire::{Document, Value};

/// A find command shaped like the lab workload's requests.
pub fn find_command(key: i32) -> Document {
    Document::new()
        .with("find", "randomPhrases")
        .with("filter", Document::new().with("_id", Document::new().with("$eq", key)))
        .with("limit", 1i32)
        .with("singleBatch", true)
        .with("$db", "randomPhrases")
}

/// A single-document cursor reply of roughly the mock server's size.
pub fn find_reply(key: i32) -> Document {
    let doc = Document::new()
        .with("_id", key)
        .with("phrase", "x".repeat(200));
    Document::new()
        .with(
            "cursor",
            Document::new()
                .with("firstBatch", Value::Array(vec![Value::Document(doc)]))
                .with("id", 0i64)
                .with("ns", "randomPhrases.randomPhrases"),
        )
        .with("ok", 1.0)
}
