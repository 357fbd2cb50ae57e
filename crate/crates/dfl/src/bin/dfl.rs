fn main() {
    dfl::harness::main_cli();
}
