// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

// each test binary uses a different slice of these helpers
#![allow(dead_code)]

pub mod corpus;
pub mod explorer;
