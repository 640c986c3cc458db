int a, b, s[N];
for (int i = 0; i < N; i++) {
    a = a + 1;
    s[i] = a * b;
}
