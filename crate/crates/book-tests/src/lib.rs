// mdbook cannot run the listings against a workspace crate, so every chapter
// is pulled in as the docs of an empty module and `cargo test --doc` runs
// them. One module per chapter keeps failures traceable to a file.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/hamiltonians.md")]
pub mod hamiltonians {}
#[doc = include_str!("../../../book/src/exact.md")]
pub mod exact {}
#[doc = include_str!("../../../book/src/ansatz.md")]
pub mod ansatz {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/surrogate.md")]
pub mod surrogate {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
