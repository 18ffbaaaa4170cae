namespace diamond {
}
