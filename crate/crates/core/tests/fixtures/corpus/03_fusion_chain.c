int a[N], b[N], x[N];
for (int i = 0; i < N; i++)
    a[i] = x[i] + 1;
for (int i = 0; i < N; i++)
    b[i] = a[i] * 2;
