// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use netkv_bench::{find_command, find_reply};
use netkv_core::filter::classify_client;
use netkv_core::wire::{decode_document, encode_document, RawMessage};

fn codec(c: &mut Criterion) {
    let mut group = c.benchmark_group("codec");
    let reply = find_reply(42);
    let encoded = encode_document(&reply).unwrap();
    group.throughput(Throughput::Bytes(encoded.len() as u64));
    group.bench_function("encode_reply", |b| b.iter(|| encode_document(black_box(&reply)).unwrap()));
    group.bench_function("decode_reply", |b| b.iter(|| decode_document(black_box(&encoded)).unwrap()));

    let msg = RawMessage::command(7, 0, &find_command(42)).unwrap();
    let bytes = msg.to_bytes();
    group.bench_function("frame_from_bytes", |b| b.iter(|| RawMessage::from_bytes(black_box(&bytes)).unwrap()));
    group.bench_function("classify_find", |b| b.iter(|| classify_client(black_box(&msg))));
    group.finish();
}

criterion_group!(benches, codec);
criterion_main!(benches);
