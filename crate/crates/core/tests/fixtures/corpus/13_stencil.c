float u[N], w[N];
for (int i = 1; i < N - 1; i++)
    w[i] = u[i - 1] + u[i + 1] - 2.0 * u[i];
