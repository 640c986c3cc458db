int v[N], w[N];
w[0] = 0;
#pragma polca scanl PLUS 0 v w
for (int i = 0; i < N - 1; i++)
    w[i + 1] = w[i] + v[i];
