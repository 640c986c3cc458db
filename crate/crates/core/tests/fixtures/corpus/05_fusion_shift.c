int a[N], b[N], x[N];
for (int i = 0; i < N - 1; i++)
    a[i + 1] = x[i];
for (int i = 0; i < N - 1; i++)
    b[i] = a[i];
