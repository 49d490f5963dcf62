// SPDX-License-Identifier: MIT OR Apache-2.0

use attnscope_cli::alloc::CountingAlloc;

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

fn main() {
    std::process::exit(attnscope_cli::main_with_args(std::env::args_os()));
}
